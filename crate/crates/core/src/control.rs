//! Drive waveforms `f(t) ∈ [−1, 1]` that modulate the spin frequency.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::DerivedFrequencies;
use crate::Scalar;

/// Number of points used to scan one period of a multi-mode drive for
/// excursions beyond `[−1, 1]`.
pub const CLIP_SCAN_POINTS: usize = 4096;

/// Uniformly sampled, piecewise-constant control: `f(t) = samples[⌊t/dt⌋]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseControl<T> {
    /// Seconds.
    pub dt: T,
    pub samples: Vec<T>,
}

impl<T: Scalar> PiecewiseControl<T> {
    pub fn new(dt: T, samples: Vec<T>) -> Result<Self> {
        let pc = Self { dt, samples };
        pc.validate()?;
        Ok(pc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(domain("piecewise control needs dt > 0"));
        }
        if self.samples.is_empty() {
            return Err(domain("piecewise control needs at least one sample"));
        }
        if let Some(bad) = self.samples.iter().find(|v| !(v.abs() <= T::one())) {
            return Err(domain(format!("control sample {bad} outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total time spanned by the grid.
    pub fn duration(&self) -> T {
        self.dt * T::from_count(self.samples.len())
    }

    /// Index of the sample active at `t`, clamped to the last sample.
    /// The flag is set when `t` lies past the end of the grid.
    pub fn index_at(&self, t: T) -> (usize, bool) {
        let k = (t / self.dt).floor().to_f64_lossy();
        let last = self.samples.len() - 1;
        if k >= last as f64 + 1.0 {
            (last, true)
        } else {
            ((k.max(0.0) as usize).min(last), false)
        }
    }
}

/// Every drive family used by the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlWaveform<T> {
    /// `amplitude · sin(ω t + phase)`.
    Sinusoidal {
        omega: T,
        phase: T,
        amplitude: T,
    },
    /// `sgn(sin(ω t + phase))`.
    BangBang {
        omega: T,
        phase: T,
    },
    PiecewiseConstant(PiecewiseControl<T>),
    /// `tanh[Σₙ aₙ sin(n ω₋ t) + bₙ cos(n ω₋ t)]`, n = 1..N.
    FourierTanh {
        omega_minus: T,
        a: Vec<T>,
        b: Vec<T>,
    },
    /// `Σᵢ aᵢ cos(qᵢ ω₋ t + φᵢ)`, hard-clipped to `[−1, 1]`.
    MultiMode {
        omega_minus: T,
        q: Vec<u32>,
        a: Vec<T>,
        phi: Vec<T>,
    },
}

/// How much of one period a multi-mode drive spends beyond `[−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipReport<T> {
    pub max_abs: T,
    pub clipped_fraction: T,
}

impl<T: Scalar> ControlWaveform<T> {
    pub fn sinusoidal(omega: T, phase: T, amplitude: T) -> Result<Self> {
        let w = Self::Sinusoidal {
            omega,
            phase,
            amplitude,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn fourier_tanh(omega_minus: T, a: Vec<T>, b: Vec<T>) -> Result<Self> {
        let w = Self::FourierTanh { omega_minus, a, b };
        w.validate()?;
        Ok(w)
    }

    /// Builds a multi-mode drive. Coefficient sets whose sum exceeds one in
    /// magnitude are accepted; see [`ControlWaveform::clip_report`].
    pub fn multi_mode(omega_minus: T, q: Vec<u32>, a: Vec<T>, phi: Vec<T>) -> Result<Self> {
        let w = Self::MultiMode {
            omega_minus,
            q,
            a,
            phi,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[T], what: &str| -> Result<()> {
            if vals.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(domain(format!("{what} must be finite")))
            }
        };
        match self {
            Self::Sinusoidal {
                omega,
                phase,
                amplitude,
            } => {
                finite(&[*omega, *phase, *amplitude], "sinusoidal parameters")?;
                if amplitude.abs() > T::one() {
                    return Err(domain("sinusoidal amplitude must satisfy |amplitude| <= 1"));
                }
            }
            Self::BangBang { omega, phase } => finite(&[*omega, *phase], "bang-bang parameters")?,
            Self::PiecewiseConstant(pc) => pc.validate()?,
            Self::FourierTanh { omega_minus, a, b } => {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        expected: a.len(),
                        got: b.len(),
                    });
                }
                finite(a, "Fourier coefficients")?;
                finite(b, "Fourier coefficients")?;
                if !(*omega_minus > T::zero()) {
                    return Err(domain("omega_minus must be positive"));
                }
            }
            Self::MultiMode {
                omega_minus,
                q,
                a,
                phi,
            } => {
                if q.len() != a.len() || q.len() != phi.len() {
                    return Err(Error::DimensionMismatch {
                        expected: q.len(),
                        got: if q.len() != a.len() {
                            a.len()
                        } else {
                            phi.len()
                        },
                    });
                }
                if q.contains(&0) {
                    return Err(domain("multi-mode harmonic indices must be positive"));
                }
                finite(a, "mode amplitudes")?;
                finite(phi, "mode phases")?;
                if !(*omega_minus > T::zero()) {
                    return Err(domain("omega_minus must be positive"));
                }
            }
        }
        Ok(())
    }

    /// `f(t)`, clipped to `[−1, 1]`. Past the end of a piecewise grid the last
    /// sample is returned (see [`ControlWaveform::is_beyond_range`]).
    pub fn evaluate(&self, t: T) -> Result<T> {
        if !(t >= T::zero()) {
            return Err(domain(format!("control evaluated at negative time {t}")));
        }
        Ok(self.evaluate_unchecked(t))
    }

    pub fn is_beyond_range(&self, t: T) -> bool {
        match self {
            Self::PiecewiseConstant(pc) => pc.index_at(t).1,
            _ => false,
        }
    }

    /// Value before clipping (identical to `evaluate` except for multi-mode).
    pub fn raw_value(&self, t: T) -> T {
        match self {
            Self::Sinusoidal {
                omega,
                phase,
                amplitude,
            } => *amplitude * (*omega * t + *phase).sin(),
            Self::BangBang { omega, phase } => {
                let s = (*omega * t + *phase).sin();
                if s > T::zero() {
                    T::one()
                } else if s < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Self::PiecewiseConstant(pc) => pc.samples[pc.index_at(t).0],
            Self::FourierTanh { omega_minus, a, b } => {
                fourier_argument(*omega_minus, a, b, t).tanh()
            }
            Self::MultiMode {
                omega_minus,
                q,
                a,
                phi,
            } => q
                .iter()
                .zip(a)
                .zip(phi)
                .map(|((&qi, &ai), &pi)| {
                    ai * (T::from_count(qi as usize) * *omega_minus * t + pi).cos()
                })
                .sum(),
        }
    }

    pub(crate) fn evaluate_unchecked(&self, t: T) -> T {
        let v = self.raw_value(t);
        v.max(-T::one()).min(T::one())
    }

    /// Period of the waveform, when it has one.
    pub fn period(&self) -> Option<T> {
        match self {
            Self::Sinusoidal { omega, .. } | Self::BangBang { omega, .. } => {
                (*omega != T::zero()).then(|| T::TAU() / omega.abs())
            }
            Self::FourierTanh { omega_minus, .. } | Self::MultiMode { omega_minus, .. } => {
                Some(T::TAU() / *omega_minus)
            }
            Self::PiecewiseConstant(_) => None,
        }
    }

    /// Peak excursion and the fraction of one period spent beyond `[−1, 1]`,
    /// from a uniform scan of [`CLIP_SCAN_POINTS`] points. Zero for every
    /// family other than multi-mode.
    pub fn clip_report(&self) -> ClipReport<T> {
        match self {
            Self::MultiMode { omega_minus, .. } => {
                let period = T::TAU() / *omega_minus;
                let n = CLIP_SCAN_POINTS;
                let step = period / T::from_count(n);
                let mut max_abs = T::zero();
                let mut clipped = 0usize;
                for k in 0..n {
                    let v = self.raw_value(step * T::from_count(k)).abs();
                    max_abs = max_abs.max(v);
                    if v > T::one() {
                        clipped += 1;
                    }
                }
                ClipReport {
                    max_abs,
                    clipped_fraction: T::from_count(clipped) / T::from_count(n),
                }
            }
            _ => ClipReport {
                max_abs: T::one(),
                clipped_fraction: T::zero(),
            },
        }
    }
}

pub(crate) fn fourier_argument<T: Scalar>(omega_minus: T, a: &[T], b: &[T], t: T) -> T {
    let mut acc = T::zero();
    for (n, (&an, &bn)) in a.iter().zip(b).enumerate() {
        let phase = T::from_count(n + 1) * omega_minus * t;
        acc += an * phase.sin() + bn * phase.cos();
    }
    acc
}

/// Samples `waveform` at the midpoints `(k + ½)·dt` of a uniform grid.
pub fn sample_on_grid<T: Scalar>(
    waveform: &ControlWaveform<T>,
    dt: T,
    n_samples: usize,
) -> Result<PiecewiseControl<T>> {
    if !(dt > T::zero()) {
        return Err(domain("sampling step must be positive"));
    }
    if n_samples == 0 {
        return Err(domain("need at least one sample"));
    }
    let half = T::lit(0.5);
    let samples = (0..n_samples)
        .map(|k| waveform.evaluate_unchecked((T::from_count(k) + half) * dt))
        .collect();
    Ok(PiecewiseControl { dt, samples })
}

/// Square wave at the sum frequency, `sgn(sin(ω₊ t + phase))`.
pub fn square_wave_reference<T: Scalar>(
    df: &DerivedFrequencies<T>,
    phase: T,
) -> ControlWaveform<T> {
    ControlWaveform::BangBang {
        omega: df.omega_plus,
        phase,
    }
}

/// Unit-amplitude sinusoid at the sum frequency, the conventional drive.
pub fn sinusoidal_reference<T: Scalar>(df: &DerivedFrequencies<T>, phase: T) -> ControlWaveform<T> {
    ControlWaveform::Sinusoidal {
        omega: df.omega_plus,
        phase,
        amplitude: T::one(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    fn df() -> DerivedFrequencies<f64> {
        presets::fig1_global::<f64>(0.02).derived()
    }

    #[test]
    fn zero_fourier_is_zero() {
        let w = ControlWaveform::fourier_tanh(1.0, vec![0.0; 7], vec![0.0; 7]).unwrap();
        for t in [0.0, 0.3, 12.5] {
            assert_eq!(w.evaluate(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn published_two_mode_set_at_origin() {
        let d = df();
        let m = presets::AMPLIFICATION_M2;
        let w =
            ControlWaveform::multi_mode(d.omega_minus, m.q.to_vec(), m.a.to_vec(), m.phi.to_vec())
                .unwrap();
        let expected = 1.07 * 2.39f64.cos() + 0.34 * (-2.26f64).cos();
        assert!(expected.abs() <= 1.0);
        assert!((w.evaluate(0.0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn bang_bang_quarter_period() {
        let d = df();
        let w = square_wave_reference(&d, 0.0);
        assert_eq!(w.evaluate(d.t_p / 4.0).unwrap(), 1.0);
        assert_eq!(w.evaluate(1e-15).unwrap(), 1.0);
        assert_eq!(w.evaluate(0.75 * d.t_p).unwrap(), -1.0);
    }

    #[test]
    fn negative_time_rejected() {
        let w = sinusoidal_reference(&df(), 0.0);
        assert!(w.evaluate(-1e-12).is_err());
    }

    #[test]
    fn piecewise_beyond_range_returns_last() {
        let w = ControlWaveform::PiecewiseConstant(
            PiecewiseControl::new(1.0, vec![0.1, -0.2, 0.3]).unwrap(),
        );
        assert_eq!(w.evaluate(1.5).unwrap(), -0.2);
        assert!(!w.is_beyond_range(2.9));
        assert_eq!(w.evaluate(7.0).unwrap(), 0.3);
        assert!(w.is_beyond_range(7.0));
        assert!(PiecewiseControl::new(1.0, vec![1.5]).is_err());
        assert!(PiecewiseControl::new(0.0, vec![0.5]).is_err());
    }

    #[test]
    fn resampling_piecewise_is_identity() {
        let samples: Vec<f64> = (0..37).map(|k| ((k as f64) * 0.37).sin()).collect();
        let pc = PiecewiseControl::new(0.25, samples).unwrap();
        let again =
            sample_on_grid(&ControlWaveform::PiecewiseConstant(pc.clone()), 0.25, 37).unwrap();
        assert_eq!(again, pc);
    }

    #[test]
    fn sinusoid_sampled_at_midpoints() {
        let d = df();
        let w = sinusoidal_reference(&d, 0.0);
        let dt = d.t_p / 40.0;
        let pc = sample_on_grid(&w, dt, 40).unwrap();
        for (k, v) in pc.samples.iter().enumerate() {
            let t = (k as f64 + 0.5) * dt;
            assert_eq!(*v, (d.omega_plus * t).sin());
        }
    }

    #[test]
    fn square_wave_sampling_splits_evenly() {
        let d = df();
        let dt = d.t_p / 40.0;
        let pc = sample_on_grid(&square_wave_reference(&d, 0.0), dt, 40 * 5).unwrap();
        for period in pc.samples.chunks(40) {
            assert!(period[..20].iter().all(|&v| v == 1.0));
            assert!(period[20..].iter().all(|&v| v == -1.0));
        }
    }

    #[test]
    fn clip_report_flags_overshoot() {
        let ok = ControlWaveform::<f64>::multi_mode(1.0, vec![1], vec![1.0], vec![0.0]).unwrap();
        assert_eq!(ok.clip_report().clipped_fraction, 0.0);
        let over = ControlWaveform::<f64>::multi_mode(1.0, vec![1], vec![2.0], vec![0.0]).unwrap();
        let r = over.clip_report();
        assert!((r.max_abs - 2.0).abs() < 1e-12);
        // |2 cos x| > 1 on two thirds of the period.
        assert!((r.clipped_fraction - 2.0 / 3.0).abs() < 1e-3);
        assert_eq!(over.evaluate(0.0).unwrap(), 1.0);
        assert!(ControlWaveform::multi_mode(1.0, vec![1, 2], vec![1.0], vec![0.0]).is_err());
        assert!(ControlWaveform::multi_mode(1.0, vec![0], vec![1.0], vec![0.0]).is_err());
    }

    fn any_waveform() -> impl Strategy<Value = ControlWaveform<f64>> {
        let sin =
            (0.1f64..50.0, -4.0f64..4.0, -1.0f64..=1.0).prop_map(|(omega, phase, amplitude)| {
                ControlWaveform::Sinusoidal {
                    omega,
                    phase,
                    amplitude,
                }
            });
        let bang = (0.1f64..50.0, -4.0f64..4.0)
            .prop_map(|(omega, phase)| ControlWaveform::BangBang { omega, phase });
        let pc = (0.01f64..2.0, prop::collection::vec(-1.0f64..=1.0, 1..40)).prop_map(
            |(dt, samples)| ControlWaveform::PiecewiseConstant(PiecewiseControl { dt, samples }),
        );
        let ft = (
            0.1f64..10.0,
            prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 0..12),
        )
            .prop_map(|(omega_minus, ab)| {
                let (a, b) = ab.into_iter().unzip();
                ControlWaveform::FourierTanh { omega_minus, a, b }
            });
        let mm = (
            0.1f64..10.0,
            prop::collection::vec((1u32..20, -2.0f64..2.0, -4.0f64..4.0), 1..8),
        )
            .prop_map(|(omega_minus, modes)| {
                let mut q = Vec::new();
                let mut a = Vec::new();
                let mut phi = Vec::new();
                for (qi, ai, pi) in modes {
                    q.push(qi);
                    a.push(ai);
                    phi.push(pi);
                }
                ControlWaveform::MultiMode {
                    omega_minus,
                    q,
                    a,
                    phi,
                }
            });
        prop_oneof![sin, bang, pc, ft, mm]
    }

    proptest! {
        #[test]
        fn every_waveform_is_bounded(w in any_waveform(), t in 0.0f64..100.0) {
            let v = w.evaluate(t).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
        }

        #[test]
        fn harmonic_families_are_periodic(w in any_waveform(), t in 0.0f64..5.0) {
            if matches!(w, ControlWaveform::FourierTanh { .. } | ControlWaveform::MultiMode { .. }) {
                let p = w.period().unwrap();
                let v0 = w.raw_value(t);
                let v1 = w.raw_value(t + p);
                prop_assert!((v0 - v1).abs() <= 1e-12 * (1.0 + v0.abs()), "{} vs {}", v0, v1);
            }
        }

        #[test]
        fn sampled_values_are_reproduced_at_midpoints(w in any_waveform(), dt in 0.01f64..1.0, n in 1usize..64) {
            let pc = sample_on_grid(&w, dt, n).unwrap();
            let wp = ControlWaveform::PiecewiseConstant(pc.clone());
            for k in 0..n {
                let t = (k as f64 + 0.5) * dt;
                prop_assert_eq!(wp.evaluate(t).unwrap(), pc.samples[k]);
                prop_assert_eq!(pc.samples[k], w.evaluate(t).unwrap());
            }
        }
    }
}
