//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Two-loop recursion for the search direction (Nocedal & Wright, Alg. 7.4),
//! bracketing/zoom line search with safeguarded cubic interpolation
//! (Alg. 3.5/3.6). Every accepted iterate strictly decreases the objective.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Stop once `‖∇J‖∞ ≤ grad_tol`.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Trial steps per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-8,
            max_iters: 500,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    IterationLimit,
    LineSearchFailure,
}

/// Result of [`lbfgs_minimize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOutcome<T> {
    pub theta: Vec<T>,
    pub value: T,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<T>,
    pub grad_norm_history: Vec<T>,
    pub iterations: usize,
    pub n_evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn inf_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F> Counted<F> {
    fn eval<T: Scalar>(&mut self, x: &[T]) -> Result<(T, Vec<T>)>
    where
        F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
    {
        self.evaluations += 1;
        (self.f)(x)
    }
}

/// Minimizes a function given as a closure returning `(value, gradient)`.
///
/// Aborts with [`Error::NonFinite`] when the starting point produces a
/// non-finite value or gradient; non-finite trial points inside the line
/// search are treated as overshoots and shrunk.
pub fn lbfgs_minimize<T, F>(
    value_and_gradient: F,
    theta0: &[T],
    opts: &LbfgsOptions,
) -> Result<LbfgsOutcome<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let mut oracle = Counted {
        f: value_and_gradient,
        evaluations: 0,
    };
    let mut x = theta0.to_vec();
    let (mut fx, mut gx) = oracle.eval(&x)?;
    if gx.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: gx.len(),
        });
    }
    if !fx.is_finite() || gx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "objective or gradient at the starting point".into(),
        ));
    }
    let grad_tol = T::lit(opts.grad_tol);
    let c1 = T::lit(opts.wolfe_c1);
    let c2 = T::lit(opts.wolfe_c2);
    let mut history_f = vec![fx];
    let mut history_g = vec![inf_norm(&gx)];
    let mut pairs: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut termination = Termination::IterationLimit;
    let mut iterations = 0;

    if inf_norm(&gx) <= grad_tol {
        termination = Termination::GradientTolerance;
    } else {
        for iter in 0..opts.max_iters {
            iterations = iter + 1;
            let mut d = two_loop(&gx, &pairs);
            let mut slope = dot(&gx, &d);
            if !(slope < T::zero()) {
                pairs.clear();
                d = gx.iter().map(|v| -*v).collect();
                slope = dot(&gx, &d);
            }
            let alpha0 = if pairs.is_empty() {
                let gn = dot(&gx, &gx).sqrt();
                T::one().min(T::one() / gn)
            } else {
                T::one()
            };
            let ls = strong_wolfe(
                &mut oracle,
                &x,
                fx,
                slope,
                &d,
                alpha0,
                c1,
                c2,
                opts.max_line_search,
            )?;
            let Some(step) = ls else {
                termination = Termination::LineSearchFailure;
                break;
            };
            let s: Vec<T> = d.iter().map(|v| *v * step.alpha).collect();
            let y: Vec<T> = step.grad.iter().zip(&gx).map(|(a, b)| *a - *b).collect();
            let sy = dot(&s, &y);
            if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                if pairs.len() == opts.memory {
                    pairs.pop_front();
                }
                if opts.memory > 0 {
                    pairs.push_back((s, y, T::one() / sy));
                }
            }
            x = step.x;
            fx = step.value;
            gx = step.grad;
            history_f.push(fx);
            history_g.push(inf_norm(&gx));
            if inf_norm(&gx) <= grad_tol {
                termination = Termination::GradientTolerance;
                break;
            }
        }
    }

    Ok(LbfgsOutcome {
        theta: x,
        value: fx,
        objective_history: history_f,
        grad_norm_history: history_g,
        iterations,
        n_evaluations: oracle.evaluations,
        converged: termination == Termination::GradientTolerance,
        termination,
    })
}

/// `−H·g` from the stored pairs `(s, y, 1/sᵀy)`, oldest first.
fn two_loop<T: Scalar>(g: &[T], pairs: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * *yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (*a - b) * *si;
        }
    }
    q.iter().map(|v| -*v).collect()
}

struct Step<T> {
    alpha: T,
    x: Vec<T>,
    value: T,
    grad: Vec<T>,
}

struct Probe<T> {
    alpha: T,
    value: T,
    slope: T,
    finite: bool,
    x: Vec<T>,
    grad: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<T: Scalar, F: FnMut(&[T]) -> Result<(T, Vec<T>)>>(
    oracle: &mut Counted<F>,
    x0: &[T],
    f0: T,
    slope0: T,
    d: &[T],
    alpha_init: T,
    c1: T,
    c2: T,
    max_trials: usize,
) -> Result<Option<Step<T>>> {
    let probe = |alpha: T, oracle: &mut Counted<F>| -> Result<Probe<T>> {
        let x: Vec<T> = x0.iter().zip(d).map(|(a, b)| *a + alpha * *b).collect();
        let (value, grad) = oracle.eval(&x)?;
        let finite = value.is_finite() && grad.iter().all(|v| v.is_finite());
        let slope = if finite { dot(&grad, d) } else { T::nan() };
        Ok(Probe {
            alpha,
            value,
            slope,
            finite,
            x,
            grad,
        })
    };
    let armijo = |p: &Probe<T>| p.finite && p.value <= f0 + c1 * p.alpha * slope0;
    let curvature = |p: &Probe<T>| p.slope.abs() <= -c2 * slope0;
    let accept = |p: Probe<T>| Step {
        alpha: p.alpha,
        x: p.x,
        value: p.value,
        grad: p.grad,
    };

    let mut lo = Probe {
        alpha: T::zero(),
        value: f0,
        slope: slope0,
        finite: true,
        x: x0.to_vec(),
        grad: Vec::new(),
    };
    let mut alpha = alpha_init;
    let mut trials = 0;
    let hi;
    // Bracketing phase.
    loop {
        if trials >= max_trials {
            return Ok(fallback(lo, f0).map(accept));
        }
        trials += 1;
        let p = probe(alpha, oracle)?;
        if !armijo(&p) || (lo.alpha > T::zero() && p.value >= lo.value) {
            hi = p;
            break;
        }
        if curvature(&p) {
            return Ok(Some(accept(p)));
        }
        if p.slope >= T::zero() {
            hi = std::mem::replace(&mut lo, p);
            break;
        }
        lo = p;
        alpha *= T::lit(2.0);
    }
    // Zoom phase; `lo` always satisfies Armijo and has the lowest value seen.
    let mut hi = hi;
    while trials < max_trials {
        trials += 1;
        let alpha = interpolate(&lo, &hi);
        let p = probe(alpha, oracle)?;
        if !armijo(&p) || p.value >= lo.value {
            hi = p;
        } else {
            if curvature(&p) {
                return Ok(Some(accept(p)));
            }
            if p.slope * (hi.alpha - lo.alpha) >= T::zero() {
                hi = std::mem::replace(&mut lo, p);
            } else {
                lo = p;
            }
        }
        if (hi.alpha - lo.alpha).abs() <= T::epsilon() * lo.alpha.abs().max(T::one()) {
            break;
        }
    }
    Ok(fallback(lo, f0).map(accept))
}

/// A point with sufficient decrease but no curvature condition is still
/// progress; only give up when nothing improved.
fn fallback<T: Scalar>(lo: Probe<T>, f0: T) -> Option<Probe<T>> {
    (lo.alpha > T::zero() && lo.value < f0).then_some(lo)
}

/// Safeguarded cubic minimizer between the bracket ends, bisection otherwise.
fn interpolate<T: Scalar>(lo: &Probe<T>, hi: &Probe<T>) -> T {
    let a = lo.alpha;
    let b = hi.alpha;
    let mid = (a + b) * T::lit(0.5);
    if !hi.finite {
        return a + (b - a) * T::lit(0.25);
    }
    let d1 = lo.slope + hi.slope - T::lit(3.0) * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if !(disc >= T::zero()) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + T::lit(2.0) * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = (right - left) * T::lit(0.1);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn convex_quadratic_50d() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let target: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let theta0: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t = target.clone();
        let out = lbfgs_minimize(
            move |x: &[f64]| {
                let g: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a - b).collect();
                Ok((0.5 * dot(&g, &g), g))
            },
            &theta0,
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 60);
        for (a, b) in out.theta.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let opts = LbfgsOptions {
            max_iters: 200,
            ..Default::default()
        };
        let out = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(out.converged, "{:?}", out.termination);
        assert!((out.theta[0] - 1.0).abs() < 1e-6 && (out.theta[1] - 1.0).abs() < 1e-6);
        assert!(out.iterations <= 200);
        assert!(out.objective_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let out = lbfgs_minimize(
            |_x: &[f64]| Ok((3.0, vec![0.0; 4])),
            &[0.5; 4],
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.n_evaluations, 1);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn non_finite_start_aborts() {
        let err = lbfgs_minimize(
            |_x: &[f64]| Ok((f64::NAN, vec![0.0])),
            &[0.0],
            &LbfgsOptions::default(),
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn overshoot_to_infinity_is_shrunk() {
        // exp barrier: finite only for x < 1.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = if x[0] < 1.0 {
                (x[0] - 0.5).powi(2) - (1.0 - x[0]).ln()
            } else {
                f64::INFINITY
            };
            let g = if x[0] < 1.0 {
                2.0 * (x[0] - 0.5) + 1.0 / (1.0 - x[0])
            } else {
                f64::NAN
            };
            Ok((v, vec![g]))
        };
        let out = lbfgs_minimize(f, &[-20.0], &LbfgsOptions::default()).unwrap();
        assert!(out.converged);
        // Minimizer of (x-1/2)^2 - ln(1-x): 2(x-1/2)(1-x) = -1  =>  x = (3 - sqrt(9))/4 + ... solve numerically.
        let x = out.theta[0];
        assert!((2.0 * (x - 0.5) * (1.0 - x) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn single_precision_quadratic() {
        let out = lbfgs_minimize(
            |x: &[f32]| {
                Ok((
                    x.iter().map(|v| (v - 2.0) * (v - 2.0)).sum(),
                    x.iter().map(|v| 2.0 * (v - 2.0)).collect(),
                ))
            },
            &[0.0f32; 3],
            &LbfgsOptions {
                grad_tol: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.theta.iter().all(|v| (v - 2.0).abs() < 1e-4));
    }
}
