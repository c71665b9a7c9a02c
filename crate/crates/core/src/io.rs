//! Plain-text exports. Floats are written with 17 significant digits and
//! LF line endings so files diff cleanly between runs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::control::PiecewiseControl;
use crate::error::{Error, Result};
use crate::propagator::{Metrics, Trajectory};
use crate::spectral::{HarmonicSet, Spectrum};
use crate::Scalar;

pub const TRAJECTORY_HEADER: &str = "t_seconds,var_xa,var_ya,var_xb,var_yb";
pub const CONTROL_HEADER: &str = "f";
pub const SPECTRUM_HEADER: &str = "freq_hz,amplitude,phase_rad";
pub const HARMONICS_HEADER: &str = "q,freq_hz,amplitude,phase_rad";

fn num<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

pub fn write_trajectory_csv<T: Scalar, W: Write>(traj: &Trajectory<T>, mut w: W) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for i in 0..traj.times.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            num(traj.times[i]),
            num(traj.var_xa[i]),
            num(traj.var_ya[i]),
            num(traj.var_xb[i]),
            num(traj.var_yb[i])
        )?;
    }
    Ok(())
}

/// One sample per line under a `f` header. The grid spacing is not stored.
pub fn write_control_csv<T: Scalar, W: Write>(
    control: &PiecewiseControl<T>,
    mut w: W,
) -> Result<()> {
    writeln!(w, "{CONTROL_HEADER}")?;
    for s in &control.samples {
        writeln!(w, "{}", num(*s))?;
    }
    Ok(())
}

pub fn read_control_csv<T: Scalar, R: BufRead>(r: R, dt: T) -> Result<PiecewiseControl<T>> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == CONTROL_HEADER => {}
        _ => {
            return Err(Error::Format(format!(
                "control file must start with a `{CONTROL_HEADER}` header"
            )))
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Format(format!("line {}: not a number: {t:?}", i + 2)))?;
        samples.push(T::lit(v));
    }
    PiecewiseControl::new(dt, samples)
}

pub fn write_spectrum_csv<T: Scalar, W: Write>(spec: &Spectrum<T>, mut w: W) -> Result<()> {
    writeln!(w, "{SPECTRUM_HEADER}")?;
    for k in 0..spec.len() {
        writeln!(
            w,
            "{},{},{}",
            num(spec.freqs[k] / T::TAU()),
            num(spec.amplitudes[k]),
            num(spec.phases[k])
        )?;
    }
    Ok(())
}

pub fn write_harmonics_csv<T: Scalar, W: Write>(hs: &HarmonicSet<T>, mut w: W) -> Result<()> {
    writeln!(w, "{HARMONICS_HEADER}")?;
    for i in 0..hs.len() {
        let f = T::from_count(hs.q[i] as usize) * hs.omega_minus / T::TAU();
        writeln!(
            w,
            "{},{},{},{}",
            hs.q[i],
            num(f),
            num(hs.a[i]),
            num(hs.phi[i])
        )?;
    }
    Ok(())
}

/// JSON layout of [`Metrics`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub s_amp_db: f64,
    pub s_sqz_db: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub rate_per_s: Option<f64>,
}

impl<T: Scalar> From<&Metrics<T>> for MetricsRecord {
    fn from(m: &Metrics<T>) -> Self {
        MetricsRecord {
            s_amp_db: m.s_amp.to_f64_lossy(),
            s_sqz_db: m.s_sqz.to_f64_lossy(),
            v_max: m.v_max.to_f64_lossy(),
            v_min: m.v_min.to_f64_lossy(),
            rate_per_s: m.rate.map(|r| r.to_f64_lossy()),
        }
    }
}

pub fn write_metrics_json<T: Scalar, W: Write>(m: &Metrics<T>, mut w: W) -> Result<()> {
    let rec = MetricsRecord::from(m);
    serde_json::to_writer_pretty(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vacuum_state;
    use crate::presets;
    use crate::propagator::{propagate, PropagationConfig};

    #[test]
    fn control_round_trip_is_exact() {
        let samples = vec![0.1, -1.0, 1.0 / 3.0, 2f64.sqrt() - 1.0, 0.0];
        let pc = PiecewiseControl::new(0.25, samples.clone()).unwrap();
        let mut buf = Vec::new();
        write_control_csv(&pc, &mut buf).unwrap();
        let back = read_control_csv(buf.as_slice(), 0.25).unwrap();
        assert_eq!(back.samples, samples);
        assert!(!buf.contains(&b'\r'));
    }

    #[test]
    fn control_reader_rejects_garbage() {
        assert!(read_control_csv::<f64, _>("x\n1\n".as_bytes(), 1.0).is_err());
        assert!(read_control_csv::<f64, _>("f\n1\nabc\n".as_bytes(), 1.0).is_err());
    }

    #[test]
    fn trajectory_csv_shape() {
        let p = presets::undriven_check::<f64>();
        let w =
            crate::control::ControlWaveform::sinusoidal(p.derived().omega_plus, 0.0, 0.0).unwrap();
        let traj = propagate(
            &p,
            &w,
            &vacuum_state(),
            20.0 * p.derived().t_p,
            &PropagationConfig::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), traj.times.len());
        assert!(rows.iter().all(|r| r.split(',').count() == 5));
    }

    #[test]
    fn metrics_json_fields() {
        let m = Metrics {
            s_amp: 1.5,
            s_sqz: 0.0,
            v_max: 0.3,
            v_min: 0.25,
            rate: None,
        };
        let mut buf = Vec::new();
        write_metrics_json(&m, &mut buf).unwrap();
        let rec: MetricsRecord = serde_json::from_slice(&buf).unwrap();
        assert_eq!(rec, MetricsRecord::from(&m));
        assert_eq!(rec.rate_per_s, None);
    }
}
