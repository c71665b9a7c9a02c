//! Exact propagation of `dC/dt = A(t) C + C A(t)ᵀ + G` under piecewise-constant
//! drives.
//!
//! Over an interval where `A` is constant the flow is the congruence-affine
//! map `C ↦ F C Fᵀ + Q` with `F = exp(A dt)` and
//! `Q = ∫₀^dt exp(As) G exp(Aᵀs) ds`. Both come out of one exponential of the
//! 8×8 block `[[A, G], [0, −Aᵀ]]·dt` (Van Loan). Maps compose and can be
//! raised to integer powers, which is what makes Floquet fast-forwarding over
//! thousands of drive periods cheap.

use serde::{Deserialize, Serialize};

use crate::control::{sample_on_grid, ControlWaveform, PiecewiseControl};
use crate::error::{domain, Error, Result};
use crate::linalg::{Mat, Mat4};
use crate::model::{CovarianceState, ScaledGenerator, SystemParams};
use crate::Scalar;

/// Flow `C ↦ F C Fᵀ + Q` over an interval of length `duration` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CongruenceAffineMap<T> {
    pub f_mat: Mat4<T>,
    pub q_mat: Mat4<T>,
    pub duration: T,
}

impl<T: Scalar> CongruenceAffineMap<T> {
    pub fn identity() -> Self {
        Self {
            f_mat: Mat4::identity(),
            q_mat: Mat4::zeros(),
            duration: T::zero(),
        }
    }

    pub fn apply_matrix(&self, c: &Mat4<T>) -> Mat4<T> {
        (self.f_mat.congruence(c) + self.q_mat).symmetrized()
    }

    pub fn apply(&self, state: &CovarianceState<T>) -> CovarianceState<T> {
        CovarianceState {
            c: self.apply_matrix(&state.c),
            time: state.time + self.duration,
        }
    }

    /// `next ∘ self`: first `self`, then `next`.
    pub fn then(&self, next: &Self) -> Self {
        compose(next, self)
    }

    /// Largest entrywise relative deviation of `F` and `Q` from `reference`.
    pub fn rel_diff(&self, reference: &Self) -> T {
        self.f_mat
            .rel_diff(&reference.f_mat)
            .max(self.q_mat.rel_diff(&reference.q_mat))
    }
}

/// `second ∘ first = (F₂F₁, F₂Q₁F₂ᵀ + Q₂, d₁ + d₂)`.
pub fn compose<T: Scalar>(
    second: &CongruenceAffineMap<T>,
    first: &CongruenceAffineMap<T>,
) -> CongruenceAffineMap<T> {
    CongruenceAffineMap {
        f_mat: second.f_mat * first.f_mat,
        q_mat: (second.f_mat.congruence(&first.q_mat) + second.q_mat).symmetrized(),
        duration: first.duration + second.duration,
    }
}

/// `k`-fold self-composition by binary powering.
pub fn pow_map<T: Scalar>(m: &CongruenceAffineMap<T>, k: u64) -> CongruenceAffineMap<T> {
    let mut result = CongruenceAffineMap::identity();
    let mut base = *m;
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            // All factors are powers of the same map, so order is immaterial.
            result = compose(&base, &result);
        }
        k >>= 1;
        if k > 0 {
            base = compose(&base, &base);
        }
    }
    result
}

/// Exact interval map for constant drift `a_mat` and diffusion `g_mat` (SI units).
pub fn step_map<T: Scalar>(
    a_mat: &Mat4<T>,
    g_mat: &Mat4<T>,
    dt: T,
) -> Result<CongruenceAffineMap<T>> {
    if !(dt >= T::zero()) {
        return Err(domain(format!("step duration {dt} must be non-negative")));
    }
    if dt == T::zero() {
        return Ok(CongruenceAffineMap::identity());
    }
    let (f_mat, q_mat) = van_loan(&a_mat.scale(dt), &g_mat.scale(dt));
    Ok(CongruenceAffineMap {
        f_mat,
        q_mat,
        duration: dt,
    })
}

/// `(F, Q)` from the already time-scaled `A·dt` and `G·dt`.
fn van_loan<T: Scalar>(a_dt: &Mat4<T>, g_dt: &Mat4<T>) -> (Mat4<T>, Mat4<T>) {
    let m = augmented(a_dt, g_dt).expm();
    let f = m.block::<4>(0, 0);
    let q = (m.block::<4>(0, 4) * f.transpose()).symmetrized();
    (f, q)
}

fn augmented<T: Scalar>(a_dt: &Mat4<T>, g_dt: &Mat4<T>) -> Mat<T, 8> {
    let mut h = Mat::<T, 8>::zeros();
    h.set_block(0, 0, a_dt);
    h.set_block(0, 4, g_dt);
    h.set_block(4, 4, &(-a_dt.transpose()));
    h
}

/// Step map together with its derivative with respect to the control value.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StepSensitivity<T> {
    pub map: CongruenceAffineMap<T>,
    pub d_f: Mat4<T>,
    pub d_q: Mat4<T>,
}

/// Builds the interval map for control value `f` and its exact derivative
/// `∂(F, Q)/∂f` through the Fréchet derivative of the Van Loan exponential,
/// read off the 16×16 block `[[H, E], [0, H]]`.
pub(crate) fn step_sensitivity<T: Scalar>(
    gen: &ScaledGenerator<T>,
    f: T,
    tau: T,
    duration: T,
) -> StepSensitivity<T> {
    let h = augmented(&gen.drift(f).scale(tau), &gen.noise.scale(tau));
    let d = gen.direction.scale(tau);
    let mut e = Mat::<T, 8>::zeros();
    e.set_block(0, 0, &d);
    e.set_block(4, 4, &(-d.transpose()));
    let mut big = Mat::<T, 16>::zeros();
    big.set_block(0, 0, &h);
    big.set_block(0, 8, &e);
    big.set_block(8, 8, &h);
    let x = big.expm();
    let m = x.block::<8>(0, 0);
    let l = x.block::<8>(0, 8);
    let f_mat = m.block::<4>(0, 0);
    let m12 = m.block::<4>(0, 4);
    let d_f = l.block::<4>(0, 0);
    let d_m12 = l.block::<4>(0, 4);
    let q_mat = (m12 * f_mat.transpose()).symmetrized();
    let d_q = (d_m12 * f_mat.transpose() + m12 * d_f.transpose()).symmetrized();
    StepSensitivity {
        map: CongruenceAffineMap {
            f_mat,
            q_mat,
            duration,
        },
        d_f,
        d_q,
    }
}

/// Step map for control value `f` on the scaled generator.
pub(crate) fn scaled_step<T: Scalar>(
    gen: &ScaledGenerator<T>,
    f: T,
    tau: T,
    duration: T,
) -> CongruenceAffineMap<T> {
    let (f_mat, q_mat) = van_loan(&gen.drift(f).scale(tau), &gen.noise.scale(tau));
    CongruenceAffineMap {
        f_mat,
        q_mat,
        duration,
    }
}

/// Step maps for a sequence of control samples, reusing maps for repeated
/// values (bang-bang drives need only two exponentials).
pub(crate) fn step_maps_for<T: Scalar>(
    gen: &ScaledGenerator<T>,
    samples: &[T],
    dt: T,
) -> Vec<CongruenceAffineMap<T>> {
    let tau = gen.tau(dt);
    let mut cache: std::collections::HashMap<u64, CongruenceAffineMap<T>> = Default::default();
    samples
        .iter()
        .map(|&f| {
            let key = f.to_f64_lossy().to_bits();
            *cache
                .entry(key)
                .or_insert_with(|| scaled_step(gen, f, tau, dt))
        })
        .collect()
}

/// Relative tolerance on the grid duration matching one difference period.
pub const PERIOD_MATCH_TOL: f64 = 1e-9;

/// Monodromy of the periodic system: the fold of step maps over a control
/// grid spanning exactly one period `2π/ω₋`.
pub fn period_map<T: Scalar>(
    params: &SystemParams<T>,
    control: &PiecewiseControl<T>,
) -> Result<CongruenceAffineMap<T>> {
    control.validate()?;
    let df = params.derived();
    let grid = control.duration();
    check_period(grid, df.t_minus)?;
    let gen = ScaledGenerator::new(params)?;
    let maps = step_maps_for(&gen, &control.samples, control.dt);
    Ok(maps
        .iter()
        .fold(CongruenceAffineMap::identity(), |acc, m| compose(m, &acc)))
}

pub(crate) fn check_period<T: Scalar>(grid: T, period: T) -> Result<()> {
    if !period.is_finite() || ((grid - period).abs() / period) > T::lit(PERIOD_MATCH_TOL) {
        return Err(Error::GridMismatch {
            grid: grid.to_f64_lossy(),
            period: period.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Natural log of the spectral radius of `F`, per second of map duration.
/// Twice this value is the asymptotic growth rate of the covariance.
pub fn floquet_log_multiplier_rate<T: Scalar>(m: &CongruenceAffineMap<T>) -> T {
    // ‖F^(2^k)‖^(2^-k) → ρ(F); track the scale in log form.
    let mut f = m.f_mat;
    let mut log_scale = T::zero();
    let mut power = T::one();
    for _ in 0..60 {
        let s = f.max_abs();
        if s == T::zero() {
            return T::neg_infinity();
        }
        f = f.scale(T::one() / s);
        log_scale += s.ln();
        f = f * f;
        log_scale *= T::lit(2.0);
        power *= T::lit(2.0);
    }
    let estimate = (log_scale + f.max_abs().ln()) / power;
    estimate / m.duration
}

/// Time series of the quadrature variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    /// Seconds.
    pub times: Vec<T>,
    pub var_xa: Vec<T>,
    pub var_ya: Vec<T>,
    pub var_xb: Vec<T>,
    pub var_yb: Vec<T>,
    pub full_states: Option<Vec<CovarianceState<T>>>,
    /// Window (seconds) over which the per-period envelope is taken.
    pub envelope_window: T,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn series(&self, quadrature_index: usize) -> Result<&[T]> {
        Ok(match quadrature_index {
            0 => &self.var_xa,
            1 => &self.var_ya,
            2 => &self.var_xb,
            3 => &self.var_yb,
            other => return Err(domain(format!("quadrature index {other} not in 0..4"))),
        })
    }

    fn push(&mut self, state: &CovarianceState<T>, keep: bool) {
        let v = state.variances();
        self.times.push(state.time);
        self.var_xa.push(v[0]);
        self.var_ya.push(v[1]);
        self.var_xb.push(v[2]);
        self.var_yb.push(v[3]);
        if keep {
            self.full_states.get_or_insert_with(Vec::new).push(*state);
        }
    }

    /// Per-window maxima `(time of max, max)` of one variance series.
    pub fn envelope(&self, quadrature_index: usize) -> Result<Vec<(T, T)>> {
        let series = self.series(quadrature_index)?;
        let mut out: Vec<(T, T)> = Vec::new();
        let mut current: Option<(i64, T, T)> = None;
        let t0 = self.times.first().copied().unwrap_or(T::zero());
        let nudge = T::lit(1e-9);
        for (&t, &v) in self.times.iter().zip(series) {
            let w = ((t - t0) / self.envelope_window + nudge)
                .floor()
                .to_f64_lossy() as i64;
            match current {
                Some((cw, ct, cv)) if cw == w => {
                    if v > cv {
                        current = Some((w, t, v));
                    } else {
                        current = Some((cw, ct, cv));
                    }
                }
                Some((_, ct, cv)) => {
                    out.push((ct, cv));
                    current = Some((w, t, v));
                }
                None => current = Some((w, t, v)),
            }
        }
        if let Some((_, t, v)) = current {
            out.push((t, v));
        }
        Ok(out)
    }
}

/// Settings for [`propagate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Grid points per sum-frequency period `t_p`.
    pub samples_per_tp: usize,
    /// Record every this many steps; `None` means once per `t_p`.
    pub record_stride: Option<usize>,
    /// Also keep the full covariance at every record.
    pub keep_states: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            samples_per_tp: 40,
            record_stride: None,
            keep_states: false,
        }
    }
}

impl PropagationConfig {
    pub fn stride(&self) -> usize {
        self.record_stride.unwrap_or(self.samples_per_tp).max(1)
    }
}

/// Propagates `c0` under `control` on the grid `dt = t_p / samples_per_tp`
/// (midpoint sampling) for `round(horizon/dt)` steps.
///
/// Waveforms whose period is a whole number of grid steps are sampled over
/// one period and the step maps are reused cyclically.
pub fn propagate<T: Scalar>(
    params: &SystemParams<T>,
    control: &ControlWaveform<T>,
    c0: &CovarianceState<T>,
    horizon: T,
    config: &PropagationConfig,
) -> Result<Trajectory<T>> {
    if !(horizon > T::zero()) {
        return Err(domain("horizon must be positive"));
    }
    if config.samples_per_tp < 2 {
        return Err(domain("samples_per_tp must be at least 2"));
    }
    control.validate()?;
    let df = params.derived();
    let dt = df.t_p / T::from_count(config.samples_per_tp);
    let n_steps = ((horizon / dt).round().to_f64_lossy() as usize).max(1);
    let gen = ScaledGenerator::new(params)?;

    let cycle = periodic_cycle_len(control, dt);
    let n_sampled = cycle.unwrap_or(n_steps).min(n_steps);
    let samples = sample_on_grid(control, dt, n_sampled)?.samples;
    let maps = step_maps_for(&gen, &samples, dt);

    run_maps(&maps, dt, n_steps, c0, config, df.t_p)
}

/// Propagates `c0` over the whole grid of a piecewise control, using the
/// control's own step `dt` (no resampling).
pub fn propagate_piecewise<T: Scalar>(
    params: &SystemParams<T>,
    control: &PiecewiseControl<T>,
    c0: &CovarianceState<T>,
    config: &PropagationConfig,
) -> Result<Trajectory<T>> {
    control.validate()?;
    let gen = ScaledGenerator::new(params)?;
    let maps = step_maps_for(&gen, &control.samples, control.dt);
    run_maps(
        &maps,
        control.dt,
        maps.len(),
        c0,
        config,
        params.derived().t_p,
    )
}

/// Repeats the samples of `cycle` end to end until `horizon` is covered
/// (`round(horizon / cycle.dt)` steps).
pub fn propagate_cyclic<T: Scalar>(
    params: &SystemParams<T>,
    cycle: &PiecewiseControl<T>,
    c0: &CovarianceState<T>,
    horizon: T,
    config: &PropagationConfig,
) -> Result<Trajectory<T>> {
    if !(horizon > T::zero()) {
        return Err(domain("horizon must be positive"));
    }
    cycle.validate()?;
    let gen = ScaledGenerator::new(params)?;
    let maps = step_maps_for(&gen, &cycle.samples, cycle.dt);
    let n_steps = ((horizon / cycle.dt).round().to_f64_lossy() as usize).max(1);
    run_maps(&maps, cycle.dt, n_steps, c0, config, params.derived().t_p)
}

fn run_maps<T: Scalar>(
    maps: &[CongruenceAffineMap<T>],
    dt: T,
    n_steps: usize,
    c0: &CovarianceState<T>,
    config: &PropagationConfig,
    envelope_window: T,
) -> Result<Trajectory<T>> {
    let stride = config.stride();
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps / stride + 2),
        var_xa: Vec::new(),
        var_ya: Vec::new(),
        var_xb: Vec::new(),
        var_yb: Vec::new(),
        full_states: None,
        envelope_window,
    };
    let mut state = *c0;
    traj.push(&state, config.keep_states);
    for k in 0..n_steps {
        let m = &maps[k % maps.len()];
        state = CovarianceState {
            c: m.apply_matrix(&state.c),
            time: c0.time + dt * T::from_count(k + 1),
        };
        if (k + 1) % stride == 0 || k + 1 == n_steps {
            if !state.c.is_finite() {
                return Err(Error::NonFinite(format!(
                    "covariance diverged at step {}",
                    k + 1
                )));
            }
            traj.push(&state, config.keep_states);
        }
    }
    Ok(traj)
}

/// Number of grid steps in one period of `control`, when that is an integer.
fn periodic_cycle_len<T: Scalar>(control: &ControlWaveform<T>, dt: T) -> Option<usize> {
    if matches!(control, ControlWaveform::PiecewiseConstant(_)) {
        return None;
    }
    let period = control.period()?;
    let steps = period / dt;
    let n = steps.round();
    if n >= T::one() && ((steps - n).abs() / steps) < T::lit(1e-12).max(T::epsilon() * T::lit(8.0))
    {
        Some(n.to_f64_lossy() as usize)
    } else {
        None
    }
}

/// Figures of merit of one quadrature series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    /// `S(V_max)`, dB.
    pub s_amp: T,
    /// `−min(0, S(V_min))`, dB.
    pub s_sqz: T,
    pub v_max: T,
    pub v_min: T,
    /// Log-envelope growth rate of the variance, 1/s, when the run is long enough to fit one.
    pub rate: Option<T>,
}

/// `S(V) = 10·log₁₀(2√V)`, zero at the coherent-state variance 1/4.
pub fn decibels<T: Scalar>(v: T) -> T {
    T::lit(10.0) * (T::lit(2.0) * v.sqrt()).log10()
}

/// Default trailing fraction of the horizon used for rate fits.
pub const DEFAULT_FIT_FRACTION: f64 = 0.5;
/// Fewest envelope points a rate fit accepts.
pub const MIN_FIT_POINTS: usize = 10;

pub fn metrics_from_trajectory<T: Scalar>(
    traj: &Trajectory<T>,
    quadrature_index: usize,
) -> Result<Metrics<T>> {
    let series = traj.series(quadrature_index)?;
    if series.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    if let Some(bad) = series.iter().find(|v| !(**v > T::zero())) {
        return Err(Error::NumericDegeneracy(format!(
            "non-positive variance {bad}"
        )));
    }
    let v_max = series.iter().copied().fold(T::neg_infinity(), T::max);
    let v_min = series.iter().copied().fold(T::infinity(), T::min);
    let rate = match amplification_rate(traj, quadrature_index, T::lit(DEFAULT_FIT_FRACTION)) {
        Ok(r) => Some(r),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics {
        s_amp: decibels(v_max),
        s_sqz: T::zero().max(-decibels(v_min)),
        v_max,
        v_min,
        rate,
    })
}

/// Least-squares slope of `ln(envelope)` against time over the trailing
/// `fit_window_fraction` of the horizon. The envelope is the maximum of the
/// variance inside each `t_p` window.
pub fn amplification_rate<T: Scalar>(
    traj: &Trajectory<T>,
    quadrature_index: usize,
    fit_window_fraction: T,
) -> Result<T> {
    if !(fit_window_fraction > T::zero() && fit_window_fraction <= T::one()) {
        return Err(domain("fit window fraction must lie in (0, 1]"));
    }
    let env = traj.envelope(quadrature_index)?;
    let (Some(first), Some(last)) = (traj.times.first(), traj.times.last()) else {
        return Err(Error::InsufficientData("empty trajectory".into()));
    };
    let start = *last - fit_window_fraction * (*last - *first);
    let pts: Vec<(T, T)> = env.into_iter().filter(|(t, _)| *t >= start).collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} envelope points in the fit window, need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    if let Some((_, bad)) = pts.iter().find(|(_, v)| !(*v > T::zero())) {
        return Err(Error::NumericDegeneracy(format!(
            "non-positive variance {bad} in fit window"
        )));
    }
    let y0 = pts[0].1.ln();
    let n = T::from_count(pts.len());
    let t_mean = pts.iter().map(|p| p.0).sum::<T>() / n;
    let y_mean = pts.iter().map(|p| p.1.ln() - y0).sum::<T>() / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (t, v) in &pts {
        let dx = *t - t_mean;
        sxy += dx * (v.ln() - y0 - y_mean);
        sxx += dx * dx;
    }
    if sxx == T::zero() {
        return Err(Error::InsufficientData(
            "fit window has no time extent".into(),
        ));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_drift, build_noise, thermal_state, vacuum_state};
    use crate::presets;

    fn reference() -> SystemParams<f64> {
        presets::fig1_global(0.020)
    }

    #[test]
    fn zero_step_is_identity() {
        let p = reference();
        let m = step_map(
            &build_drift(&p, 0.3).unwrap(),
            &build_noise(&p).unwrap(),
            0.0,
        )
        .unwrap();
        assert_eq!(m, CongruenceAffineMap::identity());
        assert!(step_map(&Mat4::zeros(), &Mat4::zeros(), -1.0).is_err());
    }

    #[test]
    fn zero_drift_accumulates_noise_linearly() {
        let g = Mat4::from_diagonal([1.0, 2.0, 3.0, 4.0]);
        let m = step_map(&Mat4::zeros(), &g, 0.7).unwrap();
        assert!(m.f_mat.rel_diff(&Mat4::identity()) < 1e-15);
        assert!(m.q_mat.rel_diff(&g.scale(0.7)) < 1e-15);
    }

    #[test]
    fn half_steps_compose_to_full_step() {
        let p = presets::fig2_amplification::<f64>(0.8e9);
        let a = build_drift(&p, 0.4).unwrap();
        let g = build_noise(&p).unwrap();
        let dt = p.derived().t_p / 40.0;
        let half = step_map(&a, &g, dt / 2.0).unwrap();
        let full = step_map(&a, &g, dt).unwrap();
        assert!(compose(&half, &half).rel_diff(&full) < 1e-12);
    }

    #[test]
    fn compose_identity_and_associativity() {
        let p = reference();
        let g = build_noise(&p).unwrap();
        let dt = p.derived().t_p / 40.0;
        let m: Vec<_> = [-1.0, 0.2, 0.9]
            .iter()
            .map(|&f| step_map(&build_drift(&p, f).unwrap(), &g, dt * (1.0 + f * 0.3)).unwrap())
            .collect();
        let id = CongruenceAffineMap::identity();
        assert_eq!(compose(&id, &m[0]).rel_diff(&m[0]), 0.0);
        let left = compose(&compose(&m[2], &m[1]), &m[0]);
        let right = compose(&m[2], &compose(&m[1], &m[0]));
        assert!(left.rel_diff(&right) < 1e-12);
        assert!((left.duration - right.duration).abs() < 1e-24);
        let c = thermal_state(&p).unwrap();
        let seq = m[2].apply(&m[1].apply(&m[0].apply(&c)));
        assert!(left.apply(&c).c.rel_diff(&seq.c) < 1e-12);
    }

    #[test]
    fn powering_matches_repeated_composition() {
        let p = reference();
        let m = step_map(
            &build_drift(&p, 0.5).unwrap(),
            &build_noise(&p).unwrap(),
            3e-11,
        )
        .unwrap();
        assert_eq!(pow_map(&m, 0), CongruenceAffineMap::identity());
        assert_eq!(pow_map(&m, 1), m);
        let mut brute = CongruenceAffineMap::identity();
        for _ in 0..10 {
            brute = compose(&m, &brute);
        }
        assert!(pow_map(&m, 10).rel_diff(&brute) < 1e-12);
    }

    #[test]
    fn period_map_requires_matching_grid() {
        let p = reference();
        let df = p.derived();
        let pc = PiecewiseControl::new(df.t_minus / 199.0, vec![0.0; 200]).unwrap();
        assert!(matches!(
            period_map(&p, &pc),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn undriven_uncoupled_period_map_fixes_thermal_state() {
        let mut p = reference();
        p.g = 0.0;
        let df = p.derived();
        let pc = PiecewiseControl::new(df.t_minus / 200.0, vec![0.0; 200]).unwrap();
        let m = period_map(&p, &pc).unwrap();
        let c = thermal_state(&p).unwrap();
        assert!(m.apply(&c).c.rel_diff(&c.c) < 1e-10);
    }

    #[test]
    fn lossless_undriven_period_map_is_symplectic() {
        let mut p = reference();
        p.gamma = 0.0;
        p.kappa = 0.0;
        p.lambda_drive = 0.0;
        let df = p.derived();
        let pc = PiecewiseControl::new(df.t_minus / 200.0, vec![0.0; 200]).unwrap();
        let f = period_map(&p, &pc).unwrap().f_mat;
        let mut omega = Mat4::zeros();
        omega[(0, 1)] = 1.0;
        omega[(1, 0)] = -1.0;
        omega[(2, 3)] = 1.0;
        omega[(3, 2)] = -1.0;
        let lhs = f.transpose() * omega * f;
        assert!(lhs.rel_diff(&omega) < 1e-10);
    }

    #[test]
    fn sinusoidal_period_map_amplifies() {
        let p = presets::fig2_amplification::<f64>(1.0e9);
        let df = p.derived();
        let w = crate::control::sinusoidal_reference(&df, 0.0);
        let pc = sample_on_grid(&w, df.t_minus / 200.0, 200).unwrap();
        let m = period_map(&p, &pc).unwrap();
        assert!(m.f_mat.max_singular_value() > 1.0);
        assert!(floquet_log_multiplier_rate(&m) > 0.0);
    }

    #[test]
    fn undriven_thermal_trajectory_is_flat() {
        let mut p = reference();
        p.g = 0.0;
        let c0 = thermal_state(&p).unwrap();
        let traj = propagate(
            &p,
            &ControlWaveform::PiecewiseConstant(PiecewiseControl::new(1.0, vec![0.0]).unwrap()),
            &c0,
            50.0 * p.derived().t_p,
            &PropagationConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.len(), 51);
        for (i, series) in [&traj.var_xa, &traj.var_ya, &traj.var_xb, &traj.var_yb]
            .iter()
            .enumerate()
        {
            for v in series.iter() {
                assert!((v / c0.c[(i, i)] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn propagation_preserves_psd_from_vacuum() {
        let p = presets::fig3_squeezing::<f64>();
        let traj = propagate(
            &p,
            &crate::control::square_wave_reference(&p.derived(), 0.3),
            &vacuum_state(),
            200.0 * p.derived().t_p,
            &PropagationConfig {
                keep_states: true,
                ..Default::default()
            },
        )
        .unwrap();
        for s in traj.full_states.as_ref().unwrap() {
            assert!(s.is_psd(1e-10));
        }
    }

    fn synthetic(times: Vec<f64>, f: impl Fn(f64) -> f64, window: f64) -> Trajectory<f64> {
        let v: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        Trajectory {
            var_xa: v.clone(),
            var_ya: v.clone(),
            var_xb: v.clone(),
            var_yb: v,
            times,
            full_states: None,
            envelope_window: window,
        }
    }

    #[test]
    fn metrics_reference_values() {
        let times: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let m = metrics_from_trajectory(&synthetic(times.clone(), |_| 0.25, 1.0), 0).unwrap();
        assert!(m.s_amp.abs() < 1e-15 && m.s_sqz == 0.0);
        assert!(m.rate.unwrap().abs() <= 1e-12);
        let m = metrics_from_trajectory(
            &synthetic(times.clone(), |t| if t == 3.0 { 25.0 } else { 1.0 }, 1.0),
            0,
        )
        .unwrap();
        assert!((m.s_amp - 10.0).abs() < 1e-14);
        let m = metrics_from_trajectory(
            &synthetic(times.clone(), |t| if t == 3.0 { 0.16 } else { 1.0 }, 1.0),
            0,
        )
        .unwrap();
        // -10·log10(0.8) to 17 digits.
        assert!((m.s_sqz - 0.969_100_130_080_564_1).abs() < 1e-14);
        assert!(metrics_from_trajectory(&synthetic(times, |_| 0.0, 1.0), 0).is_err());
    }

    #[test]
    fn rate_of_synthetic_exponential() {
        let sigma = 3.7e5;
        let window = 1e-9;
        let times: Vec<f64> = (0..=4000).map(|k| k as f64 * window / 8.0).collect();
        let traj = synthetic(times, |t| 0.25 * (2.0 * sigma * t).exp(), window);
        let rate = amplification_rate(&traj, 0, 0.5).unwrap();
        assert!((rate / (2.0 * sigma) - 1.0).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn rate_needs_enough_points() {
        let times: Vec<f64> = (0..12).map(|k| k as f64).collect();
        let traj = synthetic(times, |_| 1.0, 1.0);
        assert!(matches!(
            amplification_rate(&traj, 0, 0.5),
            Err(Error::InsufficientData(_))
        ));
        assert!(metrics_from_trajectory(&traj, 0).unwrap().rate.is_none());
    }
}
