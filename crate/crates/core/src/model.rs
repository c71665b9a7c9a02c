//! Physical parameters of the cavity/spin-ensemble model and the coefficient
//! matrices of the covariance equation of motion `dC/dt = A C + C Aᵀ + G`.
//!
//! Quadrature order everywhere is `(X_a, Y_a, X_b, Y_b)`: cavity first, then
//! the bosonized spin ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::Mat4;
use crate::Scalar;

/// Reduced Planck constant, J·s (CODATA 2018, exact by SI definition of h).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K (exact).
pub const K_B: f64 = 1.380_649e-23;

pub const IDX_XA: usize = 0;
pub const IDX_YA: usize = 1;
pub const IDX_XB: usize = 2;
pub const IDX_YB: usize = 3;

/// Physical constants of the model. All rates are angular frequencies in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams<T> {
    pub omega_c: T,
    pub omega_s: T,
    pub g: T,
    pub gamma: T,
    pub kappa: T,
    pub lambda_drive: T,
    /// Kelvin.
    pub temperature: T,
}

impl<T: Scalar> SystemParams<T> {
    /// Builds and validates a parameter set given in rad/s and kelvin.
    pub fn new(
        omega_c: T,
        omega_s: T,
        g: T,
        gamma: T,
        kappa: T,
        lambda_drive: T,
        temperature: T,
    ) -> Result<Self> {
        let p = Self {
            omega_c,
            omega_s,
            g,
            gamma,
            kappa,
            lambda_drive,
            temperature,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same as [`SystemParams::new`] with every frequency given in Hz.
    pub fn from_hz(
        f_c: T,
        f_s: T,
        g: T,
        gamma: T,
        kappa: T,
        lambda_drive: T,
        temperature: T,
    ) -> Result<Self> {
        let two_pi = T::TAU();
        Self::new(
            two_pi * f_c,
            two_pi * f_s,
            two_pi * g,
            two_pi * gamma,
            two_pi * kappa,
            two_pi * lambda_drive,
            temperature,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega_c", self.omega_c),
            ("omega_s", self.omega_s),
            ("g", self.g),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("lambda_drive", self.lambda_drive),
            ("temperature", self.temperature),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(domain(format!("{name} must be finite")));
            }
        }
        if self.omega_c <= T::zero() || self.omega_s <= T::zero() {
            return Err(domain("omega_c and omega_s must be positive"));
        }
        for (name, v) in &fields[3..] {
            if *v < T::zero() {
                return Err(domain(format!("{name} must be non-negative")));
            }
        }
        if self.lambda_drive >= self.omega_s {
            return Err(domain(
                "lambda_drive must stay below omega_s so the spin frequency remains positive",
            ));
        }
        Ok(())
    }

    /// Copy with a different modulation amplitude (rad/s).
    pub fn with_lambda(mut self, lambda_drive: T) -> Result<Self> {
        self.lambda_drive = lambda_drive;
        self.validate()?;
        Ok(self)
    }

    pub fn derived(&self) -> DerivedFrequencies<T> {
        DerivedFrequencies::new(self.omega_c, self.omega_s)
    }
}

/// Sum/difference frequencies and the periods built from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedFrequencies<T> {
    pub omega_plus: T,
    pub omega_minus: T,
    /// Sum-frequency period `2π/ω₊`.
    pub t_p: T,
    /// Difference-frequency period `2π/ω₋` (infinite when `ω_c = ω_s`).
    pub t_minus: T,
    /// `m` with `ω₊ = m·ω₋`, when the ratio is integral.
    pub harmonic_ratio_m: Option<u32>,
}

impl<T: Scalar> DerivedFrequencies<T> {
    pub fn new(omega_c: T, omega_s: T) -> Self {
        let omega_plus = (omega_c + omega_s).abs();
        let omega_minus = (omega_c - omega_s).abs();
        let t_p = T::TAU() / omega_plus;
        let t_minus = if omega_minus > T::zero() {
            T::TAU() / omega_minus
        } else {
            T::infinity()
        };
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
        let harmonic_ratio_m = if omega_minus > T::zero() {
            let m = (omega_plus / omega_minus).round();
            let ok = m >= T::one()
                && ((omega_plus - m * omega_minus).abs() / omega_plus) < tol
                && m.to_f64_lossy() < u32::MAX as f64;
            ok.then(|| m.to_f64_lossy() as u32)
        } else {
            None
        };
        Self {
            omega_plus,
            omega_minus,
            t_p,
            t_minus,
            harmonic_ratio_m,
        }
    }
}

/// Quadrature covariance matrix at a point in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceState<T> {
    pub c: Mat4<T>,
    /// Seconds.
    pub time: T,
}

impl<T: Scalar> CovarianceState<T> {
    pub fn new(c: Mat4<T>, time: T) -> Self {
        Self {
            c: c.symmetrized(),
            time,
        }
    }

    pub fn variances(&self) -> [T; 4] {
        self.c.diagonal()
    }

    /// Smallest eigenvalue is at least `-rel_slack·trace`.
    pub fn is_psd(&self, rel_slack: T) -> bool {
        let ev = self.c.sym_eigenvalues();
        ev[0] >= -rel_slack * self.c.trace().abs()
    }

    /// Symplectic eigenvalues `(ν₋, ν₊)` for the quadrature convention
    /// `[X, Y] = i/2`, from the invariants `det C` and
    /// `det C_a + det C_b + 2 det C_ab`. Vacuum gives `(1/4, 1/4)`.
    pub fn symplectic_eigenvalues(&self) -> (T, T) {
        let c = &self.c;
        let det2 = |a: T, b: T, cc: T, d: T| a * d - b * cc;
        let det_a = det2(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]);
        let det_b = det2(c[(2, 2)], c[(2, 3)], c[(3, 2)], c[(3, 3)]);
        let det_ab = det2(c[(0, 2)], c[(0, 3)], c[(1, 2)], c[(1, 3)]);
        let delta = det_a + det_b + T::lit(2.0) * det_ab;
        let det = det4(c);
        let disc = (delta * delta - T::lit(4.0) * det).max(T::zero()).sqrt();
        let half = T::lit(0.5);
        let lo = ((delta - disc) * half).max(T::zero()).sqrt();
        let hi = ((delta + disc) * half).max(T::zero()).sqrt();
        (lo, hi)
    }
}

fn det4<T: Scalar>(m: &Mat4<T>) -> T {
    // Laplace expansion along the first row via 3x3 minors.
    let minor = |skip: usize| -> T {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        let a = |r: usize, k: usize| m[(r, cols[k])];
        a(1, 0) * (a(2, 1) * a(3, 2) - a(2, 2) * a(3, 1))
            - a(1, 1) * (a(2, 0) * a(3, 2) - a(2, 2) * a(3, 0))
            + a(1, 2) * (a(2, 0) * a(3, 1) - a(2, 1) * a(3, 0))
    };
    let mut acc = T::zero();
    for j in 0..4 {
        let term = m[(0, j)] * minor(j);
        if j % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

/// Bose–Einstein occupancy `1/(exp(ħω/k_B T) − 1)`; exactly zero at `T = 0`.
pub fn thermal_occupancy<T: Scalar>(omega: T, temperature: T) -> Result<T> {
    if !(omega > T::zero()) {
        return Err(domain("thermal_occupancy needs omega > 0"));
    }
    if temperature < T::zero() || !temperature.is_finite() {
        return Err(domain("temperature must be finite and non-negative"));
    }
    if temperature == T::zero() {
        return Ok(T::zero());
    }
    let x = T::lit(HBAR / K_B) * omega / temperature;
    Ok(T::one() / x.exp_m1())
}

/// Drift matrix `A` for an instantaneous control value `f_value ∈ [−1, 1]`.
pub fn build_drift<T: Scalar>(params: &SystemParams<T>, f_value: T) -> Result<Mat4<T>> {
    if !(f_value.abs() <= T::one()) {
        return Err(domain(format!("control value {f_value} outside [-1, 1]")));
    }
    Ok(drift_unchecked(params, f_value))
}

pub(crate) fn drift_unchecked<T: Scalar>(params: &SystemParams<T>, f_value: T) -> Mat4<T> {
    let two = T::lit(2.0);
    let half_gamma = params.gamma / two;
    let half_kappa = params.kappa / two;
    let spin = params.omega_s + params.lambda_drive * f_value;
    let mut a = Mat4::zeros();
    a[(0, 0)] = -half_gamma;
    a[(1, 1)] = -half_gamma;
    a[(2, 2)] = -half_kappa;
    a[(3, 3)] = -half_kappa;
    a[(0, 1)] = params.omega_c;
    a[(1, 0)] = -params.omega_c;
    a[(2, 3)] = spin;
    a[(3, 2)] = -spin;
    a[(1, 2)] = -two * params.g;
    a[(3, 0)] = -two * params.g;
    a
}

/// `∂A/∂f`: the only control-dependent entries of the drift.
pub fn drift_control_direction<T: Scalar>(params: &SystemParams<T>) -> Mat4<T> {
    let mut b = Mat4::zeros();
    b[(2, 3)] = params.lambda_drive;
    b[(3, 2)] = -params.lambda_drive;
    b
}

/// Diffusion matrix `G = diag(γ(2n_T+1), γ(2n_T+1), κ, κ)/4`.
pub fn build_noise<T: Scalar>(params: &SystemParams<T>) -> Result<Mat4<T>> {
    let n_t = thermal_occupancy(params.omega_c, params.temperature)?;
    let quarter = T::lit(0.25);
    let cav = params.gamma * (T::lit(2.0) * n_t + T::one()) * quarter;
    let spin = params.kappa * quarter;
    Ok(Mat4::from_diagonal([cav, cav, spin, spin]))
}

/// Coherent-state covariance `I/4`.
pub fn vacuum_state<T: Scalar>() -> CovarianceState<T> {
    CovarianceState {
        c: Mat4::identity().scale(T::lit(0.25)),
        time: T::zero(),
    }
}

/// Equilibrium of the undriven, uncoupled dynamics: thermal cavity, vacuum spins.
pub fn thermal_state<T: Scalar>(params: &SystemParams<T>) -> Result<CovarianceState<T>> {
    if !(params.gamma > T::zero() && params.kappa > T::zero()) {
        return Err(domain("thermal_state needs gamma > 0 and kappa > 0"));
    }
    let n_t = thermal_occupancy(params.omega_c, params.temperature)?;
    let quarter = T::lit(0.25);
    let cav = (T::lit(2.0) * n_t + T::one()) * quarter;
    Ok(CovarianceState {
        c: Mat4::from_diagonal([cav, cav, quarter, quarter]),
        time: T::zero(),
    })
}

/// Generator of the covariance flow in units where time is measured in
/// `1/ω₊`, so that drift entries are O(1).
#[derive(Clone, Copy, Debug)]
pub(crate) struct ScaledGenerator<T> {
    /// Rate unit (rad/s); `ω₊`.
    pub unit: T,
    pub a0: Mat4<T>,
    pub direction: Mat4<T>,
    pub noise: Mat4<T>,
}

impl<T: Scalar> ScaledGenerator<T> {
    pub fn new(params: &SystemParams<T>) -> Result<Self> {
        params.validate()?;
        let unit = params.omega_c + params.omega_s;
        let inv = T::one() / unit;
        Ok(Self {
            unit,
            a0: drift_unchecked(params, T::zero()).scale(inv),
            direction: drift_control_direction(params).scale(inv),
            noise: build_noise(params)?.scale(inv),
        })
    }

    pub fn drift(&self, f: T) -> Mat4<T> {
        self.a0 + self.direction.scale(f)
    }

    /// Converts seconds to the scaled time unit.
    pub fn tau(&self, seconds: T) -> T {
        seconds * self.unit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn reference() -> SystemParams<f64> {
        presets::fig1_global(0.020)
    }

    #[test]
    fn occupancy_values() {
        let w = 2.0 * std::f64::consts::PI * 2.4e9;
        assert_eq!(thermal_occupancy(w, 0.0).unwrap(), 0.0);
        // Frozen from a 50-digit evaluation of 1/(exp(ħω/kT)-1) with the same constants.
        let n300 = thermal_occupancy(w, 300.0).unwrap();
        assert!((n300 - 2_604.077_424_006_775).abs() < 1e-8, "{n300}");
        assert!((n300 - 2604.0).abs() < 0.5);
        let n20 = thermal_occupancy(w, 0.020).unwrap();
        assert!((n20 / 3.163_954_134_768_74e-3 - 1.0).abs() < 1e-12, "{n20}");
        assert!((n20 / 3.16e-3 - 1.0).abs() < 0.02);
        assert!(thermal_occupancy(0.0, 1.0).is_err());
        assert!(thermal_occupancy(-1.0, 1.0).is_err());
    }

    #[test]
    fn occupancy_is_monotone() {
        let w = 1e10;
        let mut last = 0.0;
        for t in [0.001, 0.01, 0.1, 1.0, 10.0, 300.0] {
            let n = thermal_occupancy(w, t).unwrap();
            assert!(n > last);
            last = n;
        }
        let mut last = f64::INFINITY;
        for w in [1e8, 1e9, 1e10, 1e11] {
            let n = thermal_occupancy(w, 1.0).unwrap();
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn drift_entries() {
        let p = reference();
        let two_pi = std::f64::consts::TAU;
        let a = build_drift(&p, 0.0).unwrap();
        assert_eq!(a[(2, 3)], two_pi * 3.6e9);
        for i in 0..4 {
            assert!((a[(i, i)] + two_pi * 1e5).abs() < 1e-6);
        }
        assert_eq!(a[(0, 1)], p.omega_c);
        assert_eq!(a[(1, 0)], -p.omega_c);
        assert_eq!(a[(1, 2)], -2.0 * p.g);
        assert_eq!(a[(3, 0)], -2.0 * p.g);
        let a1 = build_drift(&p, 1.0).unwrap();
        assert!((a1[(2, 3)] / (two_pi * 4.6e9) - 1.0).abs() < 1e-15);
        assert_eq!(a1[(3, 2)], -a1[(2, 3)]);
        assert!(build_drift(&p, 1.5).is_err());
        assert!(build_drift(&p, f64::NAN).is_err());
    }

    #[test]
    fn drift_trace_and_symmetric_part_independent_of_control() {
        let p = reference();
        let a0 = build_drift(&p, 0.0).unwrap();
        for f in [-1.0, -0.3, 0.7, 1.0] {
            let a = build_drift(&p, f).unwrap();
            assert!((a.trace() + p.gamma + p.kappa).abs() < 1e-3);
            let sym = (a + a.transpose()) - (a0 + a0.transpose());
            assert_eq!(sym.max_abs(), 0.0);
        }
    }

    #[test]
    fn drift_ignores_control_without_modulation() {
        let p = reference().with_lambda(0.0).unwrap();
        let a = build_drift(&p, -1.0).unwrap();
        assert_eq!(a, build_drift(&p, 0.0).unwrap());
        assert_eq!(a, build_drift(&p, 1.0).unwrap());
    }

    #[test]
    fn noise_matrix() {
        let mut p = reference();
        p.temperature = 0.0;
        let g = build_noise(&p).unwrap();
        let expected = std::f64::consts::TAU * 5e4;
        for i in 0..4 {
            assert!((g[(i, i)] / expected - 1.0).abs() < 1e-15);
        }
        p.temperature = 300.0;
        let g = build_noise(&p).unwrap();
        let n = thermal_occupancy(p.omega_c, 300.0).unwrap();
        assert!((g[(0, 0)] - p.gamma * (2.0 * n + 1.0) / 4.0).abs() < 1e-6);
        assert!(
            (g[(0, 0)] / (std::f64::consts::TAU * 2e5 * (2.0 * 2604.0 + 1.0) / 4.0) - 1.0).abs()
                < 1e-3
        );
    }

    #[test]
    fn thermal_state_annihilates_uncoupled_rhs() {
        for t in [0.0, 0.001, 0.02, 300.0] {
            let mut p = reference();
            p.g = 0.0;
            p.temperature = t;
            let c = thermal_state(&p).unwrap().c;
            let a = build_drift(&p, 0.0).unwrap();
            let rhs = a * c + c * a.transpose() + build_noise(&p).unwrap();
            let scale = (a * c).max_abs();
            assert!(rhs.max_abs() <= 1e-12 * scale, "T={t}");
        }
        let mut p = reference();
        p.temperature = 0.0;
        assert_eq!(thermal_state(&p).unwrap(), vacuum_state());
        p.temperature = 300.0;
        let c = thermal_state(&p).unwrap().c;
        assert!((c[(0, 0)] - 1302.2).abs() < 0.5);
        p.gamma = 0.0;
        assert!(thermal_state(&p).is_err());
    }

    #[test]
    fn vacuum_is_coherent_floor() {
        let v = vacuum_state::<f64>();
        assert_eq!(v.variances(), [0.25; 4]);
        assert!(v.is_psd(0.0));
        let (lo, hi) = v.symplectic_eigenvalues();
        assert!((lo - 0.25).abs() < 1e-15 && (hi - 0.25).abs() < 1e-15);
    }

    #[test]
    fn derived_frequencies_of_reference_set() {
        let d = reference().derived();
        assert_eq!(d.harmonic_ratio_m, Some(5));
        assert!((d.t_p * 6e9 - 1.0).abs() < 1e-14);
        assert!((d.t_minus / d.t_p - 5.0).abs() < 1e-12);
        assert!(d.omega_plus >= d.omega_minus);
        let skew = DerivedFrequencies::new(1.0, 2.5);
        assert_eq!(skew.harmonic_ratio_m, None);
        let degenerate = DerivedFrequencies::new(1.0, 1.0);
        assert_eq!(degenerate.omega_minus, 0.0);
        assert_eq!(degenerate.harmonic_ratio_m, None);
    }

    #[test]
    fn parameter_validation() {
        let p = reference();
        assert!(p.with_lambda(p.omega_s).is_err());
        assert!(SystemParams::new(1.0, 2.0, 0.1, -1.0, 0.0, 0.0, 0.0).is_err());
        assert!(SystemParams::new(0.0, 2.0, 0.1, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(SystemParams::new(1.0, 2.0, 0.1, 1.0, 0.0, 0.0, -1.0).is_err());
    }
}
