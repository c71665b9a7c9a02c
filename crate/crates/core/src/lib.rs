//! Covariance-matrix simulator and drive synthesizer for a parametrically
//! modulated cavity/spin-ensemble amplifier.
//!
//! The model is linear and Gaussian: a cavity mode `a` couples to the bosonized
//! collective mode `b` of a spin ensemble whose frequency is modulated as
//! `ω_s + Λ f(t)`. The second moments of the quadratures `(X_a, Y_a, X_b, Y_b)`
//! obey `dC/dt = A(t) C + C A(t)ᵀ + G`, which this crate integrates exactly for
//! piecewise-constant drives, fast-forwards with Floquet powering, and
//! differentiates with respect to the drive for L-BFGS optimization.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the double-precision types used by the CLI.

// `!(x > 0)` is deliberate: it also rejects NaN. Index loops mirror the
// matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod presets;
pub mod propagator;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use control::{sample_on_grid, sinusoidal_reference, square_wave_reference};
pub use model::{build_drift, build_noise, thermal_occupancy, thermal_state, vacuum_state};
pub use optimizer::{
    lbfgs_minimize, objective_gradient, objective_value, optimize_amplification,
    optimize_squeezing, Direction, LbfgsOptions, Parametrization,
};
pub use propagator::{
    amplification_rate, compose, metrics_from_trajectory, period_map, pow_map, propagate,
    propagate_cyclic, propagate_piecewise, step_map, PropagationConfig,
};
pub use spectral::{compute_spectrum, dominant_harmonics, reconstruct};

pub type Mat4 = linalg::Mat4<f64>;
pub type SystemParams = model::SystemParams<f64>;
pub type DerivedFrequencies = model::DerivedFrequencies<f64>;
pub type CovarianceState = model::CovarianceState<f64>;
pub type ControlWaveform = control::ControlWaveform<f64>;
pub type PiecewiseControl = control::PiecewiseControl<f64>;
pub type CongruenceAffineMap = propagator::CongruenceAffineMap<f64>;
pub type Trajectory = propagator::Trajectory<f64>;
pub type Metrics = propagator::Metrics<f64>;
pub type ObjectiveSpec = optimizer::ObjectiveSpec<f64>;
pub type OptimizationReport = optimizer::OptimizationReport<f64>;
pub type Spectrum = spectral::Spectrum<f64>;
pub type HarmonicSet = spectral::HarmonicSet<f64>;

pub type SystemParams32 = model::SystemParams<f32>;
pub type CovarianceState32 = model::CovarianceState<f32>;
pub type ControlWaveform32 = control::ControlWaveform<f32>;
pub type CongruenceAffineMap32 = propagator::CongruenceAffineMap<f32>;
