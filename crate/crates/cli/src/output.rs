//! Output directory handling. Every artifact goes through [`OutDir::write`],
//! so a failed write reports the file it was aimed at.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use paramp::propagator::Trajectory;

use crate::error::{CliError, Result};

pub struct OutDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> paramp::Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(|e| match e {
            paramp::Error::Io(source) => CliError::io(&path, source),
            other => CliError::from(other),
        })?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn write_json<S: serde::Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)
                .map_err(|e| paramp::Error::Format(e.to_string()))?;
            writeln!(w)?;
            Ok(())
        })
    }
}

/// Every `stride`-th record, always keeping the last one.
pub fn decimate(traj: &Trajectory<f64>, stride: usize) -> Trajectory<f64> {
    let n = traj.len();
    let keep: Vec<usize> = (0..n).filter(|i| i % stride == 0 || *i + 1 == n).collect();
    let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
    Trajectory {
        times: pick(&traj.times),
        var_xa: pick(&traj.var_xa),
        var_ya: pick(&traj.var_ya),
        var_xb: pick(&traj.var_xb),
        var_yb: pick(&traj.var_yb),
        full_states: None,
        envelope_window: traj.envelope_window,
    }
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-window maxima of `X_a` and `Y_a` for a window length in seconds.
pub fn write_envelope<W: Write>(
    traj: &Trajectory<f64>,
    window: f64,
    mut w: W,
) -> paramp::Result<()> {
    let mut t = traj.clone();
    t.full_states = None;
    t.envelope_window = window;
    let xa = t.envelope(0)?;
    let ya = t.envelope(1)?;
    writeln!(w, "t_xa_seconds,var_xa_max,t_ya_seconds,var_ya_max")?;
    for (a, b) in xa.iter().zip(&ya) {
        writeln!(w, "{},{},{},{}", num(a.0), num(a.1), num(b.0), num(b.1))?;
    }
    Ok(())
}
