//! Named parameter sets and published smoothed-drive coefficient tables.
//!
//! The checked-in `data/presets.csv` and `data/smoothed_modes.csv` mirror the
//! values below; an audit test keeps the two in sync.

use crate::model::SystemParams;
use crate::Scalar;

pub const CAVITY_HZ: f64 = 2.4e9;
pub const SPIN_HZ: f64 = 3.6e9;
pub const COUPLING_HZ: f64 = 3.5e6;
pub const DAMPING_HZ: f64 = 200e3;

fn base<T: Scalar>(lambda_hz: f64, temperature: f64) -> SystemParams<T> {
    SystemParams::from_hz(
        T::lit(CAVITY_HZ),
        T::lit(SPIN_HZ),
        T::lit(COUPLING_HZ),
        T::lit(DAMPING_HZ),
        T::lit(DAMPING_HZ),
        T::lit(lambda_hz),
        T::lit(temperature),
    )
    .expect("preset parameters are valid")
}

/// Global piecewise optimization run (Λ = 2π×1 GHz). The temperature is an
/// explicit argument: both 10 mK and 20 mK are in circulation for this run.
pub fn fig1_global<T: Scalar>(temperature: f64) -> SystemParams<T> {
    base(1.0e9, temperature)
}

/// Amplification-rate sweep template at room temperature.
pub fn fig2_amplification<T: Scalar>(lambda_hz: f64) -> SystemParams<T> {
    base(lambda_hz, 300.0)
}

/// Squeezing run: Λ = 2π×0.5 GHz, T = 1 mK.
pub fn fig3_squeezing<T: Scalar>() -> SystemParams<T> {
    base(0.5e9, 0.001)
}

/// No modulation and no coupling; starting from the thermal state nothing
/// should move. (With `g ≠ 0` the thermal product state is not stationary.)
pub fn undriven_check<T: Scalar>() -> SystemParams<T> {
    SystemParams {
        g: T::zero(),
        ..base(0.0, 0.020)
    }
}

/// Parameter preset by name, in SI/rad·s⁻¹ units.
#[derive(Clone, Debug)]
pub struct NamedPreset {
    pub name: &'static str,
    pub params: SystemParams<f64>,
    pub note: &'static str,
}

pub fn all() -> Vec<NamedPreset> {
    vec![
        NamedPreset {
            name: "fig1-global-10mK",
            params: fig1_global(0.010),
            note: "global piecewise optimization, T = 10 mK variant",
        },
        NamedPreset {
            name: "fig1-global-20mK",
            params: fig1_global(0.020),
            note: "global piecewise optimization, T = 20 mK variant",
        },
        NamedPreset {
            name: "fig2-sweep",
            params: fig2_amplification(1.0e9),
            note: "amplification sweep template, T = 300 K (lambda is swept)",
        },
        NamedPreset {
            name: "fig3-squeeze",
            params: fig3_squeezing(),
            note: "squeezing run, lambda = 2pi x 0.5 GHz, T = 1 mK",
        },
        NamedPreset {
            name: "undriven-check",
            params: undriven_check(),
            note: "lambda = 0, g = 0, thermal start; variances stay constant",
        },
    ]
}

pub fn by_name(name: &str) -> Option<NamedPreset> {
    all().into_iter().find(|p| p.name == name)
}

/// Published coefficients of a smoothed drive `Σ aᵢ cos(qᵢ ω₋ t + φᵢ)`.
#[derive(Clone, Copy, Debug)]
pub struct PublishedModes {
    pub name: &'static str,
    pub q: &'static [u32],
    pub a: &'static [f64],
    pub phi: &'static [f64],
}

pub const AMPLIFICATION_M2: PublishedModes = PublishedModes {
    name: "amp-m2",
    q: &[5, 15],
    a: &[1.07, 0.34],
    phi: &[2.39, -2.26],
};

pub const AMPLIFICATION_M4: PublishedModes = PublishedModes {
    name: "amp-m4",
    q: &[5, 15, 25, 35],
    a: &[1.14, 0.36, 0.1, 0.11],
    phi: &[2.39, -2.26, -0.61, 1.03],
};

pub const SQUEEZING_M6: PublishedModes = PublishedModes {
    name: "sqz-m6",
    q: &[1, 5, 9, 11, 17, 27],
    a: &[0.32, 0.81, 0.24, 0.23, 0.15, 0.11],
    phi: &[2.53, 2.72, -0.25, 1.43, 0.50, 2.75],
};

pub fn published_modes() -> [PublishedModes; 3] {
    [AMPLIFICATION_M2, AMPLIFICATION_M4, SQUEEZING_M6]
}
