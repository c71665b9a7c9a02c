//! Drive synthesis by L-BFGS on the terminal quadrature variance.

mod lbfgs;
mod objective;

pub use lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsOutcome, Termination};
pub use objective::{
    audit_gradient, objective_gradient, objective_value, AuditRow, Direction, Objective,
    ObjectiveSpec, Parametrization,
};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlWaveform, PiecewiseControl};
use crate::error::{domain, Result};
use crate::propagator::{
    metrics_from_trajectory, propagate, propagate_piecewise, Metrics, PropagationConfig,
};
use crate::spectral::HarmonicSet;
use crate::Scalar;

/// Outcome of one optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport<T> {
    /// Optimal raw parameters (pre-tanh for the tanh families).
    pub theta_opt: Vec<T>,
    pub control_opt: ControlWaveform<T>,
    /// Terminal variance at the start and after every accepted iterate.
    pub objective_history: Vec<T>,
    pub grad_norm_history: Vec<T>,
    pub n_evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub final_metrics: Metrics<T>,
    /// Seed of the random start, when one was used.
    pub seed: Option<u64>,
}

impl<T: Scalar> OptimizationReport<T> {
    pub fn final_variance(&self) -> T {
        *self
            .objective_history
            .last()
            .expect("history has the starting value")
    }
}

/// Default half-width of the uniform random start.
pub const DEFAULT_INIT_SCALE: f64 = 0.1;

/// I.i.d. uniform start in `[−scale, scale]`, reproducible from `seed`.
pub fn random_theta0<T: Scalar>(n: usize, seed: u64, scale: f64) -> Vec<T> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| T::lit(rng.gen_range(-scale..=scale)))
        .collect()
}

/// Start that encodes `amplitude·sin(ω₊ t)` inside the tanh.
pub fn sinusoidal_theta0<T: Scalar>(spec: &ObjectiveSpec<T>, amplitude: T) -> Result<Vec<T>> {
    let df = spec.params.derived();
    match &spec.parametrization {
        Parametrization::FourierTanh { n_harmonics, .. } => {
            let m = df
                .harmonic_ratio_m
                .ok_or_else(|| domain("sinusoidal start needs an integer frequency ratio"))?
                as usize;
            if m > *n_harmonics {
                return Err(domain(
                    "not enough harmonics to represent the sum frequency",
                ));
            }
            let mut theta = vec![T::zero(); 2 * n_harmonics];
            theta[m - 1] = amplitude;
            Ok(theta)
        }
        Parametrization::PiecewiseTanh { n_samples, dt } => Ok((0..*n_samples)
            .map(|k| amplitude * (df.omega_plus * (T::from_count(k) + T::lit(0.5)) * *dt).sin())
            .collect()),
        Parametrization::MultiMode { q, .. } => {
            let m = df.harmonic_ratio_m.unwrap_or(0);
            let mut theta = vec![T::zero(); 2 * q.len()];
            if let Some(i) = q.iter().position(|&qi| qi == m) {
                theta[i] = amplitude.min(T::one());
                theta[q.len() + i] = -T::FRAC_PI_2();
            }
            Ok(theta)
        }
    }
}

/// Runs L-BFGS on `spec` from `theta0` and packages the realized drive with
/// metrics from a fresh propagation.
pub fn optimize<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    theta0: &[T],
    opts: &LbfgsOptions,
) -> Result<OptimizationReport<T>> {
    let objective = Objective::new(spec)?;
    let outcome = lbfgs_minimize(|x: &[T]| objective.value_and_gradient(x), theta0, opts)?;
    let sign = spec.sign();
    let control_opt = spec.parametrization.waveform(&outcome.theta)?;
    let final_metrics = realized_metrics(spec, &control_opt)?;
    Ok(OptimizationReport {
        theta_opt: outcome.theta,
        control_opt,
        objective_history: outcome
            .objective_history
            .iter()
            .map(|v| sign * *v)
            .collect(),
        grad_norm_history: outcome.grad_norm_history,
        n_evaluations: outcome.n_evaluations,
        converged: outcome.converged,
        termination: outcome.termination,
        final_metrics,
        seed: None,
    })
}

/// Metrics of `control` propagated from `spec.c0` to `spec.t_f`, recording every step.
pub fn realized_metrics<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    control: &ControlWaveform<T>,
) -> Result<Metrics<T>> {
    let config = PropagationConfig {
        samples_per_tp: spec.samples_per_tp,
        record_stride: Some(1),
        keep_states: false,
    };
    let traj = match control {
        ControlWaveform::PiecewiseConstant(pc) => {
            propagate_piecewise(&spec.params, pc, &spec.c0, &config)?
        }
        other => propagate(&spec.params, other, &spec.c0, spec.t_f, &config)?,
    };
    metrics_from_trajectory(&traj, spec.quadrature)
}

/// Maximizes the terminal variance.
pub fn optimize_amplification<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    theta0: &[T],
    opts: &LbfgsOptions,
) -> Result<OptimizationReport<T>> {
    if spec.direction != Direction::MaximizeVariance {
        return Err(domain("amplification needs direction = maximize_variance"));
    }
    optimize(spec, theta0, opts)
}

/// Minimizes the terminal variance.
pub fn optimize_squeezing<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    theta0: &[T],
    opts: &LbfgsOptions,
) -> Result<OptimizationReport<T>> {
    if spec.direction != Direction::MinimizeVariance {
        return Err(domain("squeezing needs direction = minimize_variance"));
    }
    optimize(spec, theta0, opts)
}

/// Independent random starts (one per seed), run concurrently. Reports come
/// back in seed order; the best is the one with the most favourable terminal
/// variance for the spec's direction.
pub fn optimize_multistart<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    seeds: &[u64],
    init_scale: f64,
    opts: &LbfgsOptions,
) -> Result<Vec<OptimizationReport<T>>> {
    let n = spec.parametrization.n_params();
    seeds
        .par_iter()
        .map(|&seed| {
            let theta0 = random_theta0(n, seed, init_scale);
            let mut r = optimize(spec, &theta0, opts)?;
            r.seed = Some(seed);
            Ok(r)
        })
        .collect()
}

/// Index of the best report for `direction`.
pub fn best_report<T: Scalar>(
    reports: &[OptimizationReport<T>],
    direction: Direction,
) -> Option<usize> {
    let key = |r: &OptimizationReport<T>| match direction {
        Direction::MaximizeVariance => -r.final_variance(),
        Direction::MinimizeVariance => r.final_variance(),
    };
    (0..reports.len()).min_by(|&a, &b| {
        key(&reports[a])
            .partial_cmp(&key(&reports[b]))
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Re-optimizes amplitudes and phases of a harmonic set at fixed `q`,
/// starting from its current values. `template` supplies the physics, the
/// horizon and the direction; its parametrization is replaced.
pub fn refit_harmonics<T: Scalar>(
    template: &ObjectiveSpec<T>,
    hs: &HarmonicSet<T>,
    opts: &LbfgsOptions,
) -> Result<(HarmonicSet<T>, OptimizationReport<T>)> {
    let mut spec = template.clone();
    spec.parametrization = Parametrization::MultiMode {
        omega_minus: hs.omega_minus,
        q: hs.q.clone(),
    };
    let theta0: Vec<T> = hs.a.iter().chain(&hs.phi).copied().collect();
    let report = optimize(&spec, &theta0, opts)?;
    let m = hs.q.len();
    let wrap = |p: T| {
        let two_pi = T::TAU();
        let mut x = p % two_pi;
        if x > T::PI() {
            x -= two_pi;
        } else if x <= -T::PI() {
            x += two_pi;
        }
        x
    };
    let refit = HarmonicSet {
        omega_minus: hs.omega_minus,
        q: hs.q.clone(),
        a: report.theta_opt[..m].to_vec(),
        phi: report.theta_opt[m..].iter().map(|p| wrap(*p)).collect(),
    };
    Ok((refit, report))
}

/// Drive samples of a piecewise report, for export.
pub fn realized_samples<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    theta: &[T],
) -> Result<PiecewiseControl<T>> {
    let objective = Objective::new(spec)?;
    let (dt, _, _) = objective.grid();
    PiecewiseControl::new(dt, objective.control_samples(theta)?)
}
