//! The `simulate`, `optimize`, `spectrum` and `filter` pipelines.

use std::io::Write;
use std::path::{Path, PathBuf};

use paramp::io::{
    read_control_csv, write_control_csv, write_harmonics_csv, write_metrics_json,
    write_spectrum_csv, write_trajectory_csv, MetricsRecord,
};
use paramp::optimizer::{
    audit_gradient, best_report, optimize, optimize_multistart, random_theta0, refit_harmonics,
    sinusoidal_theta0, Objective,
};
use paramp::propagator::{metrics_from_trajectory, propagate, propagate_cyclic, PropagationConfig};
use paramp::{
    compute_spectrum, dominant_harmonics, presets, reconstruct, sample_on_grid, thermal_state,
    vacuum_state, ControlWaveform, CovarianceState, HarmonicSet, Metrics, ObjectiveSpec,
    OptimizationReport, PiecewiseControl, SystemParams, Trajectory,
};
use serde::Serialize;

use crate::config::{
    Artifact, ControlConfig, InitialState, OptimizerConfig, ParametrizationKind, Scenario,
};
use crate::error::{CliError, Result};
use crate::output::{decimate, num, write_envelope, OutDir};

/// Sum periods in the global (`--full-horizon`) run.
pub const FULL_HORIZON_TP_PERIODS: usize = 10_000;

/// Command-line switches shared by every pipeline.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub full_horizon: bool,
    pub audit_gradient: bool,
}

impl RunOptions {
    pub fn out_dir(&self, scenario: &Scenario) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new("out").join(&scenario.name))
    }

    pub fn seed(&self, scenario: &Scenario) -> u64 {
        self.seed.unwrap_or(scenario.seed)
    }
}

pub fn initial_state(scenario: &Scenario, params: &SystemParams) -> Result<CovarianceState> {
    Ok(match scenario.initial {
        InitialState::Thermal => thermal_state(params)?,
        InitialState::Vacuum => vacuum_state(),
    })
}

fn hz(v: f64) -> f64 {
    v * std::f64::consts::TAU
}

/// Published smoothed set by name.
pub fn published_set(name: &str, omega_minus: f64) -> Result<ControlWaveform> {
    let set = presets::published_modes()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| {
            CliError::Config(format!(
                "control.set: unknown set {name:?} (known: amp-m2, amp-m4, sqz-m6)"
            ))
        })?;
    Ok(ControlWaveform::multi_mode(
        omega_minus,
        set.q.to_vec(),
        set.a.to_vec(),
        set.phi.to_vec(),
    )?)
}

pub fn build_control(
    cfg: &ControlConfig,
    params: &SystemParams,
    samples_per_tp: usize,
    base: &Path,
) -> Result<ControlWaveform> {
    let df = params.derived();
    let w = match cfg {
        ControlConfig::Sinusoidal {
            amplitude,
            phase,
            freq_hz,
        } => ControlWaveform::sinusoidal(freq_hz.map_or(df.omega_plus, hz), *phase, *amplitude)?,
        ControlConfig::BangBang { phase, freq_hz } => ControlWaveform::BangBang {
            omega: freq_hz.map_or(df.omega_plus, hz),
            phase: *phase,
        },
        ControlConfig::MultiMode {
            q,
            a,
            phi,
            omega_minus_hz,
        } => ControlWaveform::multi_mode(
            omega_minus_hz.map_or(df.omega_minus, hz),
            q.clone(),
            a.clone(),
            phi.clone(),
        )?,
        ControlConfig::Published { set } => published_set(set, df.omega_minus)?,
        ControlConfig::FourierTanh {
            a,
            b,
            omega_minus_hz,
        } => ControlWaveform::fourier_tanh(
            omega_minus_hz.map_or(df.omega_minus, hz),
            a.clone(),
            b.clone(),
        )?,
        ControlConfig::Samples { path, dt_s } => {
            let dt = dt_s.unwrap_or(df.t_p / samples_per_tp as f64);
            ControlWaveform::PiecewiseConstant(read_samples(&base.join(path), dt)?)
        }
    };
    w.validate()?;
    Ok(w)
}

pub fn read_samples(path: &Path, dt: f64) -> Result<PiecewiseControl> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_control_csv(std::io::BufReader::new(file), dt).map_err(|e| match e {
        paramp::Error::Io(source) => CliError::io(path, source),
        paramp::Error::Format(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other.into(),
    })
}

/// Propagates with every step recorded and computes the `X_a` metrics.
/// Piecewise-constant drives are repeated cyclically.
pub fn evaluate(
    params: &SystemParams,
    control: &ControlWaveform,
    c0: &CovarianceState,
    horizon: f64,
    samples_per_tp: usize,
) -> Result<(Trajectory, Metrics)> {
    let config = PropagationConfig {
        samples_per_tp,
        record_stride: Some(1),
        keep_states: false,
    };
    let traj = match control {
        ControlWaveform::PiecewiseConstant(pc) => {
            propagate_cyclic(params, pc, c0, horizon, &config)?
        }
        other => propagate(params, other, c0, horizon, &config)?,
    };
    let metrics = metrics_from_trajectory(&traj, 0)?;
    Ok((traj, metrics))
}

/// Grid samples of `control` for spectral analysis: one difference period
/// when the frequencies are commensurate, otherwise the whole horizon.
pub fn analysis_samples(
    control: &ControlWaveform,
    params: &SystemParams,
    samples_per_tp: usize,
    horizon: f64,
) -> Result<PiecewiseControl> {
    if let ControlWaveform::PiecewiseConstant(pc) = control {
        return Ok(pc.clone());
    }
    let df = params.derived();
    let dt = df.t_p / samples_per_tp as f64;
    let n = match df.harmonic_ratio_m {
        Some(m) => samples_per_tp * m as usize,
        None => (horizon / dt).round().max(1.0) as usize,
    };
    Ok(sample_on_grid(control, dt, n)?)
}

pub fn summary_line(name: &str, m: &Metrics) -> String {
    let rate = m.rate.map_or("n/a".to_string(), |r| format!("{r:.6e}/s"));
    format!(
        "{name}: s_amp {:.4} dB, s_sqz {:.4} dB, v_max {:.6e}, v_min {:.6e}, rate {rate}",
        m.s_amp, m.s_sqz, m.v_max, m.v_min
    )
}

fn write_run_artifacts(
    out: &mut OutDir,
    scenario: &Scenario,
    params: &SystemParams,
    traj: &Trajectory,
    metrics: &Metrics,
    samples: &PiecewiseControl,
) -> Result<()> {
    let df = params.derived();
    if scenario.wants(Artifact::Trajectory) {
        let stride = scenario.record_stride.unwrap_or(scenario.samples_per_tp);
        let t = decimate(traj, stride);
        out.write("trajectory.csv", |w| write_trajectory_csv(&t, w))?;
    }
    if scenario.wants(Artifact::Envelope) {
        out.write("envelope_tp.csv", |w| write_envelope(traj, df.t_p, w))?;
        if df.t_minus.is_finite() {
            out.write("envelope_tminus.csv", |w| {
                write_envelope(traj, df.t_minus, w)
            })?;
        }
    }
    if scenario.wants(Artifact::Metrics) {
        out.write("metrics.json", |w| write_metrics_json(metrics, w))?;
    }
    if scenario.wants(Artifact::Control) {
        out.write("control.csv", |w| write_control_csv(samples, w))?;
    }
    if scenario.wants(Artifact::Spectrum) && samples.len() >= paramp::spectral::MIN_SPECTRUM_SAMPLES
    {
        let spec = compute_spectrum(samples)?;
        out.write("spectrum.csv", |w| write_spectrum_csv(&spec, w))?;
    }
    Ok(())
}

pub struct RunSummary {
    pub line: String,
    pub files: Vec<PathBuf>,
}

fn scenario_control(
    scenario: &Scenario,
    params: &SystemParams,
    base: &Path,
) -> Result<ControlWaveform> {
    let cfg = scenario.control.as_ref().ok_or_else(|| {
        CliError::Config("control: this command needs a [control] section".into())
    })?;
    build_control(cfg, params, scenario.samples_per_tp, base)
}

fn simulation_horizon(scenario: &Scenario, params: &SystemParams, opts: &RunOptions) -> f64 {
    if opts.full_horizon {
        FULL_HORIZON_TP_PERIODS as f64 * params.derived().t_p
    } else {
        scenario.horizon_seconds(params)
    }
}

pub fn simulate(scenario: &Scenario, base: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let params = scenario.params()?;
    let c0 = initial_state(scenario, &params)?;
    let control = scenario_control(scenario, &params, base)?;
    let horizon = simulation_horizon(scenario, &params, opts);
    let (traj, metrics) = evaluate(&params, &control, &c0, horizon, scenario.samples_per_tp)?;
    let samples = analysis_samples(&control, &params, scenario.samples_per_tp, horizon)?;
    let mut out = OutDir::create(&opts.out_dir(scenario))?;
    write_run_artifacts(&mut out, scenario, &params, &traj, &metrics, &samples)?;
    Ok(RunSummary {
        line: summary_line(&scenario.name, &metrics),
        files: out.written().to_vec(),
    })
}

pub fn spectrum(scenario: &Scenario, base: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let params = scenario.params()?;
    let control = scenario_control(scenario, &params, base)?;
    let horizon = simulation_horizon(scenario, &params, opts);
    let samples = analysis_samples(&control, &params, scenario.samples_per_tp, horizon)?;
    let spec = compute_spectrum(&samples)?;
    let mut out = OutDir::create(&opts.out_dir(scenario))?;
    out.write("spectrum.csv", |w| write_spectrum_csv(&spec, w))?;
    let mut line = format!("{}: {} bins", scenario.name, spec.len());
    if let Some(k) = spec.largest_peak() {
        line.push_str(&format!(
            ", largest peak {:.6e} Hz (amplitude {:.4})",
            spec.freqs[k] / std::f64::consts::TAU,
            spec.amplitudes[k]
        ));
    }
    if let Some(f) = &scenario.filter {
        let hs = dominant_harmonics(&spec, params.derived().omega_minus, f.m)?;
        out.write("harmonics.csv", |w| write_harmonics_csv(&hs, w))?;
        line.push_str(&format!(", harmonics q = {:?}", hs.q));
    }
    Ok(RunSummary {
        line,
        files: out.written().to_vec(),
    })
}

/// Objective for the `[optimizer]` section. `--full-horizon` switches to the
/// global piecewise run over `FULL_HORIZON_TP_PERIODS` sum periods.
pub fn objective_spec(
    scenario: &Scenario,
    params: &SystemParams,
    cfg: &OptimizerConfig,
    full: bool,
) -> Result<ObjectiveSpec> {
    let c0 = initial_state(scenario, params)?;
    let df = params.derived();
    let spt = scenario.samples_per_tp;
    let direction = cfg.direction.into();
    let kind = if full {
        ParametrizationKind::PiecewiseTanh
    } else {
        cfg.parametrization
    };
    let mut spec = match kind {
        ParametrizationKind::FourierTanh => {
            let periods = whole_periods(scenario, params)?;
            ObjectiveSpec::fourier(*params, cfg.n_harmonics, periods, direction, c0)
        }
        ParametrizationKind::PiecewiseTanh => {
            let n_tp = if full {
                FULL_HORIZON_TP_PERIODS
            } else {
                (scenario.horizon_seconds(params) / df.t_p).round().max(1.0) as usize
            };
            ObjectiveSpec::piecewise(*params, n_tp, spt, direction, c0)
        }
    };
    spec.samples_per_tp = spt;
    Ok(spec)
}

/// Horizon as a whole number of difference periods.
pub fn whole_periods(scenario: &Scenario, params: &SystemParams) -> Result<u64> {
    let t_minus = params.derived().t_minus;
    let k = scenario.horizon_seconds(params) / t_minus;
    let r = k.round();
    if r < 1.0 || (k - r).abs() > 1e-9 * r {
        return Err(CliError::Config(format!(
            "horizon: periodic optimization needs a whole number of difference periods, got {k}"
        )));
    }
    Ok(r as u64)
}

/// All starts of the configured optimization and the index of the best.
pub struct OptimizationRun {
    pub spec: ObjectiveSpec,
    pub reports: Vec<OptimizationReport>,
    pub theta0: Vec<Vec<f64>>,
    pub best: usize,
}

pub fn run_optimizer(
    scenario: &Scenario,
    params: &SystemParams,
    cfg: &OptimizerConfig,
    seed: u64,
    full: bool,
) -> Result<OptimizationRun> {
    let spec = objective_spec(scenario, params, cfg, full)?;
    let opts = cfg.lbfgs();
    let n = spec.parametrization.n_params();
    let seeds: Vec<u64> = (0..cfg.starts as u64).map(|i| seed + i).collect();
    let mut theta0: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&s| random_theta0(n, s, cfg.init_scale))
        .collect();
    let mut reports = optimize_multistart(&spec, &seeds, cfg.init_scale, &opts)?;
    if let Some(amplitude) = cfg.sinusoidal_start {
        let th = sinusoidal_theta0(&spec, amplitude)?;
        reports.push(optimize(&spec, &th, &opts)?);
        theta0.push(th);
    }
    let best = best_report(&reports, spec.direction)
        .ok_or_else(|| CliError::Numeric("optimizer produced no report".into()))?;
    Ok(OptimizationRun {
        spec,
        reports,
        theta0,
        best,
    })
}

/// Control samples of a report on the objective's grid (one cycle for the
/// periodic families).
pub fn report_samples(
    spec: &ObjectiveSpec,
    report: &OptimizationReport,
) -> Result<PiecewiseControl> {
    Ok(paramp::optimizer::realized_samples(
        spec,
        &report.theta_opt,
    )?)
}

fn audit_indices(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    (0..k).map(|i| i * (n - 1) / (k - 1).max(1)).collect()
}

pub fn optimize_cmd(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary> {
    let params = scenario.params()?;
    let cfg = scenario.optimizer.as_ref().ok_or_else(|| {
        CliError::Config("optimizer: this command needs an [optimizer] section".into())
    })?;
    let run = run_optimizer(
        scenario,
        &params,
        cfg,
        opts.seed(scenario),
        opts.full_horizon,
    )?;
    let best = &run.reports[run.best];
    let samples = report_samples(&run.spec, best)?;
    let (traj, metrics) = evaluate(
        &params,
        &best.control_opt,
        &run.spec.c0,
        run.spec.t_f,
        scenario.samples_per_tp,
    )?;
    let mut out = OutDir::create(&opts.out_dir(scenario))?;
    write_run_artifacts(&mut out, scenario, &params, &traj, &metrics, &samples)?;
    if scenario.wants(Artifact::Report) {
        out.write_json("report.json", best)?;
        out.write("history.csv", |w| {
            writeln!(w, "iteration,variance,grad_inf_norm")?;
            for (i, (v, g)) in best
                .objective_history
                .iter()
                .zip(&best.grad_norm_history)
                .enumerate()
            {
                writeln!(w, "{i},{},{}", num(*v), num(*g))?;
            }
            Ok(())
        })?;
        out.write("starts.csv", |w| {
            writeln!(
                w,
                "start,seed,final_variance,converged,termination,n_evaluations,s_amp_db,s_sqz_db,rate_per_s"
            )?;
            for (i, r) in run.reports.iter().enumerate() {
                let seed = r.seed.map_or("sinusoidal".to_string(), |s| s.to_string());
                let rate = r.final_metrics.rate.map_or("NaN".to_string(), num);
                writeln!(
                    w,
                    "{i},{seed},{},{},{:?},{},{},{},{rate}",
                    num(r.final_variance()),
                    r.converged,
                    r.termination,
                    r.n_evaluations,
                    num(r.final_metrics.s_amp),
                    num(r.final_metrics.s_sqz)
                )?;
            }
            Ok(())
        })?;
    }
    if opts.audit_gradient {
        let objective = Objective::new(&run.spec)?;
        let idx = audit_indices(objective.n_params(), cfg.audit_components);
        let start = audit_gradient(&objective, &run.theta0[run.best], &idx, 1e-6, 1e-10)?;
        let end = audit_gradient(&objective, &best.theta_opt, &idx, 1e-6, 1e-10)?;
        out.write("gradient_audit.csv", |w| {
            writeln!(w, "point,index,analytic,finite_difference,rel_error")?;
            for (label, rows) in [("start", &start), ("optimum", &end)] {
                for r in rows.iter() {
                    writeln!(
                        w,
                        "{label},{},{},{},{}",
                        r.index,
                        num(r.analytic),
                        num(r.finite_difference),
                        num(r.rel_error)
                    )?;
                }
            }
            Ok(())
        })?;
    }
    let mut line = summary_line(&scenario.name, &metrics);
    line.push_str(&format!(
        " (best of {} starts, {:?})",
        run.reports.len(),
        best.termination
    ));
    Ok(RunSummary {
        line,
        files: out.written().to_vec(),
    })
}

/// Outcome of `filter`: truncated (and optionally re-fitted) harmonic sets
/// with metrics next to the unfiltered control's.
#[derive(Clone, Debug, Serialize)]
pub struct FilterOutcome {
    pub unfiltered: MetricsRecord,
    pub harmonics: HarmonicSet,
    pub filtered: MetricsRecord,
    pub clipped_fraction: f64,
    pub refit_harmonics: Option<HarmonicSet>,
    pub refit: Option<MetricsRecord>,
}

/// Keeps the `m` dominant harmonics of `samples` (which must span whole
/// difference periods) and re-simulates; with `refit_spec`, also re-optimizes
/// amplitudes and phases at fixed `q`.
pub fn filter_samples(
    params: &SystemParams,
    c0: &CovarianceState,
    horizon: f64,
    samples_per_tp: usize,
    samples: &PiecewiseControl,
    m: usize,
    refit_spec: Option<(&ObjectiveSpec, &paramp::LbfgsOptions)>,
) -> Result<FilterOutcome> {
    let df = params.derived();
    let spec = compute_spectrum(samples)?;
    let hs = dominant_harmonics(&spec, df.omega_minus, m)?;
    let unfiltered_control = ControlWaveform::PiecewiseConstant(samples.clone());
    let (_, unfiltered) = evaluate(params, &unfiltered_control, c0, horizon, samples_per_tp)?;
    let smooth = reconstruct(&hs)?;
    let clipped_fraction = smooth.clip_report().clipped_fraction;
    let (_, filtered) = evaluate(params, &smooth, c0, horizon, samples_per_tp)?;
    let (refit_harmonics_set, refit) = match refit_spec {
        Some((template, lbfgs)) => {
            let (hs2, _) = refit_harmonics(template, &hs, lbfgs)?;
            let w = reconstruct(&hs2)?;
            let (_, m2) = evaluate(params, &w, c0, horizon, samples_per_tp)?;
            (Some(hs2), Some(MetricsRecord::from(&m2)))
        }
        None => (None, None),
    };
    Ok(FilterOutcome {
        unfiltered: MetricsRecord::from(&unfiltered),
        harmonics: hs,
        filtered: MetricsRecord::from(&filtered),
        clipped_fraction,
        refit_harmonics: refit_harmonics_set,
        refit,
    })
}

fn harmonics_toml(hs: &HarmonicSet) -> String {
    let list = |v: Vec<String>| v.join(", ");
    format!(
        "[control]\nkind = \"multi_mode\"\nomega_minus_hz = {}\nq = [{}]\na = [{}]\nphi = [{}]\n",
        num(hs.omega_minus / std::f64::consts::TAU),
        list(hs.q.iter().map(|q| q.to_string()).collect()),
        list(hs.a.iter().map(|a| num(*a)).collect()),
        list(hs.phi.iter().map(|p| num(*p)).collect()),
    )
}

pub fn filter_cmd(scenario: &Scenario, base: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let params = scenario.params()?;
    let fcfg = scenario
        .filter
        .as_ref()
        .ok_or_else(|| CliError::Config("filter: this command needs a [filter] section".into()))?;
    let df = params.derived();
    let c0 = initial_state(scenario, &params)?;
    let horizon = scenario.horizon_seconds(&params);
    let (samples, template) = match (&fcfg.input, &scenario.optimizer) {
        (Some(path), ocfg) => {
            let spt_minus = df
                .harmonic_ratio_m
                .map(|m| scenario.samples_per_tp * m as usize)
                .unwrap_or(scenario.samples_per_tp);
            let dt = fcfg.input_dt_s.unwrap_or(df.t_minus / spt_minus as f64);
            let pc = read_samples(&base.join(path), dt)?;
            let template = match ocfg {
                Some(o) => Some(objective_spec(scenario, &params, o, false)?),
                None => None,
            };
            (pc, template)
        }
        (None, Some(ocfg)) => {
            let run = run_optimizer(
                scenario,
                &params,
                ocfg,
                opts.seed(scenario),
                opts.full_horizon,
            )?;
            let pc = report_samples(&run.spec, &run.reports[run.best])?;
            let template = if opts.full_horizon {
                Some(objective_spec(scenario, &params, ocfg, false)?)
            } else {
                Some(run.spec)
            };
            (pc, template)
        }
        (None, None) => {
            return Err(CliError::Config(
                "filter.input: give a control file or an [optimizer] section to produce one".into(),
            ))
        }
    };
    let lbfgs = scenario
        .optimizer
        .as_ref()
        .map(|o| o.lbfgs())
        .unwrap_or_default();
    let refit_spec = if fcfg.refit {
        let t = template.as_ref().ok_or_else(|| {
            CliError::Config("filter.refit: needs an [optimizer] section for the objective".into())
        })?;
        let mut t = t.clone();
        t.t_f = whole_periods(scenario, &params)? as f64 * df.t_minus;
        Some(t)
    } else {
        None
    };
    let outcome = filter_samples(
        &params,
        &c0,
        horizon,
        scenario.samples_per_tp,
        &samples,
        fcfg.m,
        refit_spec.as_ref().map(|t| (t, &lbfgs)),
    )?;
    let mut out = OutDir::create(&opts.out_dir(scenario))?;
    out.write("control.csv", |w| write_control_csv(&samples, w))?;
    out.write("harmonics.csv", |w| {
        write_harmonics_csv(&outcome.harmonics, w)
    })?;
    let toml_text = harmonics_toml(&outcome.harmonics);
    out.write("harmonics.toml", |w| Ok(w.write_all(toml_text.as_bytes())?))?;
    if let Some(h) = &outcome.refit_harmonics {
        out.write("harmonics_refit.csv", |w| write_harmonics_csv(h, w))?;
        let t = harmonics_toml(h);
        out.write("harmonics_refit.toml", |w| Ok(w.write_all(t.as_bytes())?))?;
    }
    out.write_json("filter.json", &outcome)?;
    let mut line = format!(
        "{}: q = {:?}; unfiltered s_amp {:.4} dB s_sqz {:.4} dB rate {}; filtered s_amp {:.4} dB s_sqz {:.4} dB rate {}",
        scenario.name,
        outcome.harmonics.q,
        outcome.unfiltered.s_amp_db,
        outcome.unfiltered.s_sqz_db,
        fmt_rate(outcome.unfiltered.rate_per_s),
        outcome.filtered.s_amp_db,
        outcome.filtered.s_sqz_db,
        fmt_rate(outcome.filtered.rate_per_s),
    );
    if let Some(r) = &outcome.refit {
        line.push_str(&format!(
            "; refit s_amp {:.4} dB s_sqz {:.4} dB rate {}",
            r.s_amp_db,
            r.s_sqz_db,
            fmt_rate(r.rate_per_s)
        ));
    }
    Ok(RunSummary {
        line,
        files: out.written().to_vec(),
    })
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or("n/a".into(), |r| format!("{r:.6e}/s"))
}
