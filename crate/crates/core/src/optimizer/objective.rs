//! Terminal-variance objective and its exact discrete gradient.
//!
//! The drive is mapped to grid samples `f_k`, every grid step becomes a
//! congruence-affine map, and the objective is one diagonal entry of the
//! covariance at `t_f`. The gradient is the adjoint of exactly that
//! computation: step-map sensitivities come from the Fréchet derivative of
//! the Van Loan exponential, and for Floquet parametrizations the adjoint is
//! first accumulated over the `K` period repetitions and then pushed through
//! the steps of one period.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlWaveform, PiecewiseControl};
use crate::error::{domain, Error, Result};
use crate::linalg::Mat4;
use crate::model::{CovarianceState, ScaledGenerator, SystemParams};
use crate::propagator::{
    check_period, compose, pow_map, step_maps_for, step_sensitivity, CongruenceAffineMap,
};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    MaximizeVariance,
    MinimizeVariance,
}

/// How the parameter vector `θ` becomes a drive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Parametrization<T> {
    /// `f_k = tanh(θ_k)` on a grid of `n_samples` steps of `dt` seconds.
    PiecewiseTanh { n_samples: usize, dt: T },
    /// `θ = (a_1..a_N, b_1..b_N)` of the tanh-Fourier series in `ω₋`.
    FourierTanh { n_harmonics: usize, omega_minus: T },
    /// `θ = (a_1..a_m, φ_1..φ_m)` at fixed harmonic indices `q`.
    MultiMode { omega_minus: T, q: Vec<u32> },
}

impl<T: Scalar> Parametrization<T> {
    pub fn n_params(&self) -> usize {
        match self {
            Self::PiecewiseTanh { n_samples, .. } => *n_samples,
            Self::FourierTanh { n_harmonics, .. } => 2 * n_harmonics,
            Self::MultiMode { q, .. } => 2 * q.len(),
        }
    }

    /// Realized waveform for a parameter vector.
    pub fn waveform(&self, theta: &[T]) -> Result<ControlWaveform<T>> {
        self.check_len(theta)?;
        match self {
            Self::PiecewiseTanh { dt, .. } => Ok(ControlWaveform::PiecewiseConstant(
                PiecewiseControl::new(*dt, theta.iter().map(|v| v.tanh()).collect())?,
            )),
            Self::FourierTanh {
                n_harmonics,
                omega_minus,
            } => ControlWaveform::fourier_tanh(
                *omega_minus,
                theta[..*n_harmonics].to_vec(),
                theta[*n_harmonics..].to_vec(),
            ),
            Self::MultiMode { omega_minus, q } => ControlWaveform::multi_mode(
                *omega_minus,
                q.clone(),
                theta[..q.len()].to_vec(),
                theta[q.len()..].to_vec(),
            ),
        }
    }

    fn check_len(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        Ok(())
    }
}

/// What to optimize: one quadrature variance at a fixed terminal time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec<T> {
    pub params: SystemParams<T>,
    pub parametrization: Parametrization<T>,
    /// Terminal time, seconds. For the periodic parametrizations this must be
    /// a whole number of difference periods `2π/ω₋`.
    pub t_f: T,
    pub direction: Direction,
    pub c0: CovarianceState<T>,
    /// Grid points per sum-frequency period.
    pub samples_per_tp: usize,
    /// Quadrature whose variance is the objective (0 = `X_a`).
    pub quadrature: usize,
}

impl<T: Scalar> ObjectiveSpec<T> {
    /// Floquet spec over `periods` difference periods on the standard grid.
    pub fn fourier(
        params: SystemParams<T>,
        n_harmonics: usize,
        periods: u64,
        direction: Direction,
        c0: CovarianceState<T>,
    ) -> Self {
        let df = params.derived();
        Self {
            params,
            parametrization: Parametrization::FourierTanh {
                n_harmonics,
                omega_minus: df.omega_minus,
            },
            t_f: df.t_minus * T::lit(periods as f64),
            direction,
            c0,
            samples_per_tp: 40,
            quadrature: 0,
        }
    }

    /// Global piecewise spec: one free sample per grid step over `n_tp` sum periods.
    pub fn piecewise(
        params: SystemParams<T>,
        n_tp: usize,
        samples_per_tp: usize,
        direction: Direction,
        c0: CovarianceState<T>,
    ) -> Self {
        let t_p = params.derived().t_p;
        let dt = t_p / T::from_count(samples_per_tp);
        Self {
            params,
            parametrization: Parametrization::PiecewiseTanh {
                n_samples: n_tp * samples_per_tp,
                dt,
            },
            t_f: dt * T::from_count(n_tp * samples_per_tp),
            direction,
            c0,
            samples_per_tp,
            quadrature: 0,
        }
    }

    pub fn sign(&self) -> T {
        match self.direction {
            Direction::MaximizeVariance => -T::one(),
            Direction::MinimizeVariance => T::one(),
        }
    }
}

enum Basis<T> {
    Tanh,
    /// `sin(nω₋t_k)` and `cos(nω₋t_k)`, row per grid step, column per harmonic.
    Fourier {
        sin: Vec<Vec<T>>,
        cos: Vec<Vec<T>>,
    },
    MultiMode {
        omega_minus: T,
        q: Vec<u32>,
        times: Vec<T>,
    },
}

/// Precomputed grid, generator and basis for repeated evaluations.
pub struct Objective<T: Scalar> {
    spec: ObjectiveSpec<T>,
    gen: ScaledGenerator<T>,
    dt: T,
    steps: usize,
    cycles: u64,
    basis: Basis<T>,
}

/// Control samples and their local derivatives `∂f_k/∂(basis input)`.
struct Samples<T> {
    f: Vec<T>,
    /// For tanh families: `1 − f_k²`. For multi-mode: 1 where unclipped, 0 where clipped.
    local: Vec<T>,
}

impl<T: Scalar> Objective<T> {
    pub fn new(spec: &ObjectiveSpec<T>) -> Result<Self> {
        spec.params.validate()?;
        spec.c0
            .c
            .is_finite()
            .then_some(())
            .ok_or_else(|| domain("c0 must be finite"))?;
        if spec.quadrature > 3 {
            return Err(domain("quadrature index must be in 0..4"));
        }
        if !(spec.t_f > T::zero()) {
            return Err(domain("terminal time must be positive"));
        }
        let gen = ScaledGenerator::new(&spec.params)?;
        let df = spec.params.derived();
        let (dt, steps, cycles, basis) = match &spec.parametrization {
            Parametrization::PiecewiseTanh { n_samples, dt } => {
                if *n_samples == 0 || !(*dt > T::zero()) {
                    return Err(domain("piecewise parametrization needs samples and dt > 0"));
                }
                let grid = *dt * T::from_count(*n_samples);
                if ((grid - spec.t_f).abs() / spec.t_f) > T::lit(1e-9) {
                    return Err(Error::GridMismatch {
                        grid: grid.to_f64_lossy(),
                        period: spec.t_f.to_f64_lossy(),
                    });
                }
                (*dt, *n_samples, 1u64, Basis::Tanh)
            }
            Parametrization::FourierTanh { omega_minus, .. }
            | Parametrization::MultiMode { omega_minus, .. } => {
                let rel = ((*omega_minus - df.omega_minus) / df.omega_minus).abs();
                if !(rel < T::lit(1e-9)) {
                    return Err(domain(
                        "parametrization omega_minus differs from |omega_c - omega_s|",
                    ));
                }
                let Some(m) = df.harmonic_ratio_m else {
                    return Err(domain(
                        "Floquet parametrizations need an integer ratio omega_plus/omega_minus",
                    ));
                };
                if spec.samples_per_tp < 2 {
                    return Err(domain("samples_per_tp must be at least 2"));
                }
                let steps = spec.samples_per_tp * m as usize;
                let dt = df.t_minus / T::from_count(steps);
                let k = (spec.t_f / df.t_minus).round();
                if !(k >= T::one()) {
                    return Err(domain("terminal time shorter than one difference period"));
                }
                check_period(spec.t_f, k * df.t_minus)?;
                let cycles = k.to_f64_lossy() as u64;
                let half = T::lit(0.5);
                let times: Vec<T> = (0..steps).map(|i| (T::from_count(i) + half) * dt).collect();
                let basis = match &spec.parametrization {
                    Parametrization::FourierTanh { n_harmonics, .. } => {
                        let row = |trig: fn(T) -> T, t: T| -> Vec<T> {
                            (1..=*n_harmonics)
                                .map(|n| trig(T::from_count(n) * *omega_minus * t))
                                .collect()
                        };
                        Basis::Fourier {
                            sin: times.iter().map(|&t| row(T::sin, t)).collect(),
                            cos: times.iter().map(|&t| row(T::cos, t)).collect(),
                        }
                    }
                    Parametrization::MultiMode { q, .. } => {
                        if q.contains(&0) {
                            return Err(domain("harmonic indices must be positive"));
                        }
                        Basis::MultiMode {
                            omega_minus: *omega_minus,
                            q: q.clone(),
                            times,
                        }
                    }
                    Parametrization::PiecewiseTanh { .. } => unreachable!(),
                };
                (dt, steps, cycles, basis)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            gen,
            dt,
            steps,
            cycles,
            basis,
        })
    }

    pub fn spec(&self) -> &ObjectiveSpec<T> {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.spec.parametrization.n_params()
    }

    /// Grid step, steps per cycle, and number of cycles.
    pub fn grid(&self) -> (T, usize, u64) {
        (self.dt, self.steps, self.cycles)
    }

    /// Grid samples of the drive for `theta`.
    pub fn control_samples(&self, theta: &[T]) -> Result<Vec<T>> {
        Ok(self.samples(theta)?.f)
    }

    fn samples(&self, theta: &[T]) -> Result<Samples<T>> {
        self.spec.parametrization.check_len(theta)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let one = T::one();
        Ok(match &self.basis {
            Basis::Tanh => {
                let f: Vec<T> = theta.iter().map(|v| v.tanh()).collect();
                let local = f.iter().map(|v| one - *v * *v).collect();
                Samples { f, local }
            }
            Basis::Fourier { sin, cos } => {
                let n = theta.len() / 2;
                let (a, b) = theta.split_at(n);
                let f: Vec<T> = sin
                    .iter()
                    .zip(cos)
                    .map(|(s, c)| {
                        let u: T = s.iter().zip(a).map(|(x, y)| *x * *y).sum::<T>()
                            + c.iter().zip(b).map(|(x, y)| *x * *y).sum::<T>();
                        u.tanh()
                    })
                    .collect();
                let local = f.iter().map(|v| one - *v * *v).collect();
                Samples { f, local }
            }
            Basis::MultiMode {
                omega_minus,
                q,
                times,
            } => {
                let m = q.len();
                let (a, phi) = theta.split_at(m);
                let mut f = Vec::with_capacity(times.len());
                let mut local = Vec::with_capacity(times.len());
                for &t in times {
                    let raw: T = (0..m)
                        .map(|i| {
                            a[i] * (T::from_count(q[i] as usize) * *omega_minus * t + phi[i]).cos()
                        })
                        .sum();
                    if raw.abs() > one {
                        f.push(raw.signum());
                        local.push(T::zero());
                    } else {
                        f.push(raw);
                        local.push(one);
                    }
                }
                Samples { f, local }
            }
        })
    }

    /// Map over one cycle of the grid.
    fn cycle_map(&self, f: &[T]) -> CongruenceAffineMap<T> {
        step_maps_for(&self.gen, f, self.dt)
            .iter()
            .fold(CongruenceAffineMap::identity(), |acc, m| compose(m, &acc))
    }

    fn selector(&self) -> Mat4<T> {
        let mut e = Mat4::zeros();
        e[(self.spec.quadrature, self.spec.quadrature)] = self.spec.sign();
        e
    }

    /// Signed objective (negated variance when maximizing).
    pub fn value(&self, theta: &[T]) -> Result<T> {
        let s = self.samples(theta)?;
        let total = pow_map(&self.cycle_map(&s.f), self.cycles);
        let c = total.apply_matrix(&self.spec.c0.c);
        let q = self.spec.quadrature;
        Ok(self.spec.sign() * c[(q, q)])
    }

    /// Signed objective and its gradient with respect to `theta`.
    pub fn value_and_gradient(&self, theta: &[T]) -> Result<(T, Vec<T>)> {
        let s = self.samples(theta)?;
        let (value, g_f) = self.sample_gradient(&s.f)?;
        let grad = self.chain(theta, &s, &g_f);
        Ok((value, grad))
    }

    /// `∂J/∂f_k` for every grid sample of one cycle.
    fn sample_gradient(&self, f: &[T]) -> Result<(T, Vec<T>)> {
        let n = f.len();
        let tau = self.gen.tau(self.dt);
        // Prefix composites: prefix[k] = steps 0..k.
        let maps = step_maps_for(&self.gen, f, self.dt);
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(CongruenceAffineMap::identity());
        for m in &maps {
            let next = compose(m, prefix.last().unwrap());
            prefix.push(next);
        }
        drop(maps);
        let cycle = prefix[n];

        // Adjoint over the cycle repetitions.
        let fm = cycle.f_mat;
        let mut states = Vec::with_capacity(self.cycles as usize + 1);
        states.push(self.spec.c0.c);
        for _ in 0..self.cycles {
            let next = cycle.apply_matrix(states.last().unwrap());
            states.push(next);
        }
        let q = self.spec.quadrature;
        let value = self.spec.sign() * states.last().unwrap()[(q, q)];
        if !value.is_finite() {
            return Err(Error::NonFinite("terminal covariance".into()));
        }
        let mut lambda = self.selector();
        let mut x_adj = Mat4::zeros();
        let mut y_adj = Mat4::zeros();
        let two = T::lit(2.0);
        for c in states[..self.cycles as usize].iter().rev() {
            x_adj = x_adj + (lambda * fm * *c).scale(two);
            y_adj = y_adj + lambda;
            lambda = (fm.transpose() * lambda * fm).symmetrized();
        }

        // Push the cycle-level adjoint through the individual steps, newest first.
        const CHUNK: usize = 2048;
        let mut grad = vec![T::zero(); n];
        let mut r = Mat4::identity();
        let mut end = n;
        while end > 0 {
            let start = end.saturating_sub(CHUNK);
            let sens: Vec<_> = f[start..end]
                .par_iter()
                .map(|&fk| step_sensitivity(&self.gen, fk, tau, self.dt))
                .collect();
            for k in (start..end).rev() {
                let sk = &sens[k - start];
                let l = prefix[k].f_mat;
                let s_prev = prefix[k].q_mat;
                let rt = r.transpose();
                let w = (rt * y_adj * r).symmetrized();
                let g_fm = rt * x_adj * l.transpose() + (w * sk.map.f_mat * s_prev).scale(two);
                grad[k] = g_fm.dot(&sk.d_f) + w.dot(&sk.d_q);
                r = r * sk.map.f_mat;
            }
            end = start;
        }
        Ok((value, grad))
    }

    fn chain(&self, theta: &[T], s: &Samples<T>, g_f: &[T]) -> Vec<T> {
        match &self.basis {
            Basis::Tanh => g_f.iter().zip(&s.local).map(|(g, d)| *g * *d).collect(),
            Basis::Fourier { sin, cos } => {
                let n = theta.len() / 2;
                let mut grad = vec![T::zero(); 2 * n];
                for (k, (srow, crow)) in sin.iter().zip(cos).enumerate() {
                    let w = g_f[k] * s.local[k];
                    if w == T::zero() {
                        continue;
                    }
                    for j in 0..n {
                        grad[j] += w * srow[j];
                        grad[n + j] += w * crow[j];
                    }
                }
                grad
            }
            Basis::MultiMode {
                omega_minus,
                q,
                times,
            } => {
                let m = q.len();
                let mut grad = vec![T::zero(); 2 * m];
                for (k, &t) in times.iter().enumerate() {
                    let w = g_f[k] * s.local[k];
                    if w == T::zero() {
                        continue;
                    }
                    for i in 0..m {
                        let phase = T::from_count(q[i] as usize) * *omega_minus * t + theta[m + i];
                        grad[i] += w * phase.cos();
                        grad[m + i] -= w * theta[i] * phase.sin();
                    }
                }
                grad
            }
        }
    }
}

/// Signed terminal variance for `theta` (negated when maximizing).
pub fn objective_value<T: Scalar>(spec: &ObjectiveSpec<T>, theta: &[T]) -> Result<T> {
    Objective::new(spec)?.value(theta)
}

/// Exact gradient of [`objective_value`] with respect to `theta`.
pub fn objective_gradient<T: Scalar>(spec: &ObjectiveSpec<T>, theta: &[T]) -> Result<Vec<T>> {
    Ok(Objective::new(spec)?.value_and_gradient(theta)?.1)
}

/// One row of a finite-difference gradient audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

/// Compares the exact gradient with central differences of step `h` at the
/// given components. The error is relative to the finite-difference value,
/// or absolute when that is below `abs_floor`.
pub fn audit_gradient<T: Scalar>(
    objective: &Objective<T>,
    theta: &[T],
    indices: &[usize],
    h: T,
    abs_floor: f64,
) -> Result<Vec<AuditRow>> {
    let (_, grad) = objective.value_and_gradient(theta)?;
    indices
        .iter()
        .map(|&i| {
            if i >= theta.len() {
                return Err(Error::DimensionMismatch {
                    expected: theta.len(),
                    got: i + 1,
                });
            }
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd =
                ((objective.value(&plus)? - objective.value(&minus)?) / (h + h)).to_f64_lossy();
            let analytic = grad[i].to_f64_lossy();
            let err = (analytic - fd).abs();
            let rel_error = if fd.abs() > abs_floor {
                err / fd.abs()
            } else {
                err
            };
            Ok(AuditRow {
                index: i,
                analytic,
                finite_difference: fd,
                rel_error,
            })
        })
        .collect()
}
