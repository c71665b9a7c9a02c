//! Frequency-domain view of drives: spectra, dominant harmonics of `ω₋`,
//! and reconstruction of smoothed multi-mode drives.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::control::{ControlWaveform, PiecewiseControl};
use crate::error::{domain, Error, Result};
use crate::Scalar;

/// Fewest samples [`compute_spectrum`] accepts.
pub const MIN_SPECTRUM_SAMPLES: usize = 16;

/// Single-sided, sinusoid-calibrated spectrum: a sampled `A·cos(ωt + φ)`
/// on a coherent grid shows up as amplitude `A` and phase `φ` at `ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum<T> {
    /// rad/s, strictly increasing from 0.
    pub freqs: Vec<T>,
    pub amplitudes: Vec<T>,
    /// Cosine phases referred to the grid midpoints, in `(−π, π]`.
    pub phases: Vec<T>,
    /// Sample spacing of the analysed grid (seconds).
    pub dt: T,
    pub n_samples: usize,
}

impl<T: Scalar> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Mean square of the signal rebuilt from the spectrum
    /// (`A₀² + ½ΣA_k² + A_Nyq²`); equals the mean of the squared samples.
    pub fn mean_square(&self) -> T {
        let half = T::lit(0.5);
        let nyquist = self.n_samples.is_multiple_of(2);
        let last = self.len() - 1;
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| {
                if k == 0 || (nyquist && k == last) {
                    *a * *a
                } else {
                    half * *a * *a
                }
            })
            .sum()
    }

    fn bin_power(&self, k: usize) -> T {
        let a = self.amplitudes[k];
        let nyquist = self.n_samples.is_multiple_of(2) && k == self.len() - 1;
        if k == 0 || nyquist {
            a * a
        } else {
            T::lit(0.5) * a * a
        }
    }

    /// Fraction of the AC power in bins within `ω₋/4` of a positive multiple of `ω₋`.
    pub fn harmonic_power_fraction(&self, omega_minus: T) -> T {
        let mut on = T::zero();
        let mut total = T::zero();
        for k in 1..self.len() {
            let p = self.bin_power(k);
            total += p;
            if nearest_harmonic(self.freqs[k], omega_minus).is_some() {
                on += p;
            }
        }
        if total == T::zero() {
            T::one()
        } else {
            on / total
        }
    }

    /// Index of the largest non-DC bin.
    pub fn largest_peak(&self) -> Option<usize> {
        (1..self.len()).max_by(|&a, &b| {
            self.amplitudes[a]
                .partial_cmp(&self.amplitudes[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }

    /// Amplitudes of the underlying piecewise-constant (zero-order-hold)
    /// waveform rather than of its samples: each bin is multiplied by
    /// `sinc(ω dt/2)`.
    pub fn hold_corrected_amplitudes(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.freqs
            .iter()
            .zip(&self.amplitudes)
            .map(|(w, a)| {
                let x = *w * self.dt * half;
                if x == T::zero() {
                    *a
                } else {
                    *a * x.sin() / x
                }
            })
            .collect()
    }
}

fn nearest_harmonic<T: Scalar>(freq: T, omega_minus: T) -> Option<u32> {
    let q = (freq / omega_minus).round();
    if q >= T::one() && (freq - q * omega_minus).abs() <= omega_minus * T::lit(0.25) {
        Some(q.to_f64_lossy() as u32)
    } else {
        None
    }
}

pub(crate) fn wrap_phase<T: Scalar>(p: T) -> T {
    let two_pi = T::TAU();
    let mut x = p % two_pi;
    if x > T::PI() {
        x -= two_pi;
    } else if x <= -T::PI() {
        x += two_pi;
    }
    x
}

/// Discrete Fourier transform of the grid samples.
pub fn compute_spectrum<T: Scalar>(samples: &PiecewiseControl<T>) -> Result<Spectrum<T>> {
    let n = samples.samples.len();
    if n < MIN_SPECTRUM_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "spectrum needs at least {MIN_SPECTRUM_SAMPLES} samples, got {n}"
        )));
    }
    if !(samples.dt > T::zero()) {
        return Err(domain("spectrum needs dt > 0"));
    }
    let mut buf: Vec<Complex<T>> = samples
        .samples
        .iter()
        .map(|&x| Complex::new(x, T::zero()))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = T::from_count(n);
    let two = T::lit(2.0);
    let half_bins = n / 2;
    let dw = T::TAU() / (nf * samples.dt);
    let mut spec = Spectrum {
        freqs: Vec::with_capacity(half_bins + 1),
        amplitudes: Vec::with_capacity(half_bins + 1),
        phases: Vec::with_capacity(half_bins + 1),
        dt: samples.dt,
        n_samples: n,
    };
    for (k, x) in buf.iter().enumerate().take(half_bins + 1) {
        let single = k == 0 || (n.is_multiple_of(2) && k == half_bins);
        let amp = if single {
            x.norm() / nf
        } else {
            two * x.norm() / nf
        };
        let w = dw * T::from_count(k);
        // Samples sit at t_j = (j + ½)dt; refer the phase to t = 0.
        let phase = if amp == T::zero() {
            T::zero()
        } else {
            wrap_phase(x.arg() - w * samples.dt * T::lit(0.5))
        };
        spec.freqs.push(w);
        spec.amplitudes.push(amp);
        spec.phases.push(phase);
    }
    Ok(spec)
}

/// Coefficients of `Σ aᵢ cos(qᵢ ω₋ t + φᵢ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSet<T> {
    pub omega_minus: T,
    pub q: Vec<u32>,
    pub a: Vec<T>,
    pub phi: Vec<T>,
}

impl<T: Scalar> HarmonicSet<T> {
    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.a.len() || self.q.len() != self.phi.len() {
            return Err(Error::DimensionMismatch {
                expected: self.q.len(),
                got: self.a.len().min(self.phi.len()),
            });
        }
        if self.q.windows(2).any(|w| w[1] <= w[0]) || self.q.first() == Some(&0) {
            return Err(domain(
                "harmonic indices must be positive and strictly increasing",
            ));
        }
        if !(self.omega_minus > T::zero()) {
            return Err(domain("omega_minus must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Picks the `m` strongest harmonics of `ω₋` (nearest-bin assignment within
/// `ω₋/4`), returned in ascending `q`.
pub fn dominant_harmonics<T: Scalar>(
    spectrum: &Spectrum<T>,
    omega_minus: T,
    m: usize,
) -> Result<HarmonicSet<T>> {
    if m == 0 {
        return Err(domain("need at least one harmonic"));
    }
    if !(omega_minus > T::zero()) {
        return Err(domain("omega_minus must be positive"));
    }
    if spectrum.len() > 1 && spectrum.freqs[1] > omega_minus * T::lit(1.0 + 1e-9) {
        return Err(domain(
            "spectral resolution too coarse to separate multiples of omega_minus",
        ));
    }
    // Best bin per harmonic index: the one closest to q·ω₋.
    let mut best: std::collections::BTreeMap<u32, (T, usize)> = Default::default();
    for k in 1..spectrum.len() {
        let f = spectrum.freqs[k];
        if let Some(q) = nearest_harmonic(f, omega_minus) {
            let dist = (f - T::from_count(q as usize) * omega_minus).abs();
            match best.get(&q) {
                Some((d, _)) if *d <= dist => {}
                _ => {
                    best.insert(q, (dist, k));
                }
            }
        }
    }
    let peak = spectrum
        .amplitudes
        .iter()
        .skip(1)
        .copied()
        .fold(T::zero(), T::max);
    let floor = peak * T::lit(1e-9);
    let mut ranked: Vec<(u32, usize)> = best
        .into_iter()
        .filter(|(_, (_, k))| spectrum.amplitudes[*k] > floor)
        .map(|(q, (_, k))| (q, k))
        .collect();
    if ranked.len() < m {
        return Err(Error::InsufficientData(format!(
            "only {} non-zero harmonics available, {m} requested",
            ranked.len()
        )));
    }
    ranked.sort_by(|x, y| {
        spectrum.amplitudes[y.1]
            .partial_cmp(&spectrum.amplitudes[x.1])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    ranked.truncate(m);
    ranked.sort_by_key(|(q, _)| *q);
    Ok(HarmonicSet {
        omega_minus,
        q: ranked.iter().map(|(q, _)| *q).collect(),
        a: ranked
            .iter()
            .map(|(_, k)| spectrum.amplitudes[*k])
            .collect(),
        phi: ranked.iter().map(|(_, k)| spectrum.phases[*k]).collect(),
    })
}

/// Multi-mode drive for a harmonic set.
pub fn reconstruct<T: Scalar>(hs: &HarmonicSet<T>) -> Result<ControlWaveform<T>> {
    hs.validate()?;
    ControlWaveform::multi_mode(hs.omega_minus, hs.q.clone(), hs.a.clone(), hs.phi.clone())
}
