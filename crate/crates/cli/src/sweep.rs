//! Parameter sweeps comparing drive variants point by point.

use std::io::Write;
use std::path::Path;

use paramp::{sinusoidal_reference, square_wave_reference, ControlWaveform, Metrics, SystemParams};
use rayon::prelude::*;

use crate::config::{with_field, Scenario, Variant};
use crate::error::{CliError, Result};
use crate::output::{num, OutDir};
use crate::pipeline::{
    evaluate, filter_samples, initial_state, published_set, report_samples, run_optimizer,
    RunOptions, RunSummary,
};

/// One sweep-table row.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub variant: Variant,
    pub rate: f64,
    pub s_amp: f64,
    pub diagnostic: String,
}

impl SweepRow {
    fn ok(value: f64, variant: Variant, m: &Metrics, diagnostic: String) -> Self {
        Self {
            value,
            variant,
            rate: m.rate.unwrap_or(f64::NAN),
            s_amp: m.s_amp,
            diagnostic,
        }
    }

    fn failed(value: f64, variant: Variant, e: &CliError) -> Self {
        Self {
            value,
            variant,
            rate: f64::NAN,
            s_amp: f64::NAN,
            diagnostic: format!("error: {e}"),
        }
    }
}

fn point(
    scenario: &Scenario,
    base_params: &SystemParams,
    value: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let sweep = scenario.sweep.as_ref().expect("validated");
    let params = with_field(base_params, sweep.field, value)?;
    let df = params.derived();
    let c0 = initial_state(scenario, &params)?;
    let horizon = scenario.horizon_seconds(&params);
    let spt = scenario.samples_per_tp;
    let run = |w: &ControlWaveform| evaluate(&params, w, &c0, horizon, spt).map(|(_, m)| m);

    let needs_opt = sweep.variants.iter().any(|v| {
        matches!(
            v,
            Variant::Optimal | Variant::FilteredM2 | Variant::FilteredM4
        )
    });
    let optimum = if needs_opt {
        let cfg = scenario.optimizer.as_ref().expect("validated");
        Some(run_optimizer(scenario, &params, cfg, seed, false))
    } else {
        None
    };

    let mut rows = Vec::with_capacity(sweep.variants.len());
    for &variant in &sweep.variants {
        let row: Result<SweepRow> = (|| match variant {
            Variant::Sinusoidal => Ok(SweepRow::ok(
                value,
                variant,
                &run(&sinusoidal_reference(&df, 0.0))?,
                String::new(),
            )),
            Variant::BangBang => Ok(SweepRow::ok(
                value,
                variant,
                &run(&square_wave_reference(&df, 0.0))?,
                String::new(),
            )),
            Variant::SmoothedM2 | Variant::SmoothedM4 => {
                let name = if variant == Variant::SmoothedM2 {
                    "amp-m2"
                } else {
                    "amp-m4"
                };
                let w = published_set(name, df.omega_minus)?;
                let clip = w.clip_report().clipped_fraction;
                Ok(SweepRow::ok(
                    value,
                    variant,
                    &run(&w)?,
                    format!("clipped_fraction={clip:.4}"),
                ))
            }
            Variant::Optimal => {
                let o = optimum_ref(&optimum)?;
                let best = &o.reports[o.best];
                let diag = format!("start={} termination={:?}", o.best, best.termination);
                Ok(SweepRow::ok(value, variant, &run(&best.control_opt)?, diag))
            }
            Variant::FilteredM2 | Variant::FilteredM4 => {
                let m = if variant == Variant::FilteredM2 { 2 } else { 4 };
                let o = optimum_ref(&optimum)?;
                let samples = report_samples(&o.spec, &o.reports[o.best])?;
                let lbfgs = scenario.optimizer.as_ref().expect("validated").lbfgs();
                let f = filter_samples(
                    &params,
                    &c0,
                    horizon,
                    spt,
                    &samples,
                    m,
                    Some((&o.spec, &lbfgs)),
                )?;
                let refit = f.refit.expect("refit requested");
                let q: Vec<String> = f.harmonics.q.iter().map(|q| q.to_string()).collect();
                Ok(SweepRow {
                    value,
                    variant,
                    rate: refit.rate_per_s.unwrap_or(f64::NAN),
                    s_amp: refit.s_amp_db,
                    diagnostic: format!("q={}", q.join(" ")),
                })
            }
        })();
        rows.push(row.unwrap_or_else(|e| SweepRow::failed(value, variant, &e)));
    }
    Ok(rows)
}

fn optimum_ref(
    o: &Option<Result<crate::pipeline::OptimizationRun>>,
) -> Result<&crate::pipeline::OptimizationRun> {
    match o {
        Some(Ok(run)) => Ok(run),
        Some(Err(e)) => Err(CliError::Numeric(format!("optimizer failed: {e}"))),
        None => Err(CliError::Numeric("optimizer was not run".into())),
    }
}

/// Evaluates every value of the sweep (in parallel, output in input order).
pub fn sweep_rows(scenario: &Scenario, seed: u64) -> Result<Vec<SweepRow>> {
    let sweep = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep: this command needs a [sweep] section".into()))?;
    let base = scenario.params()?;
    let per_value: Vec<Result<Vec<SweepRow>>> = sweep
        .values
        .par_iter()
        .map(|&v| point(scenario, &base, v, seed))
        .collect();
    let mut rows = Vec::new();
    for r in per_value {
        // Invalid sweep values are configuration errors; numerical trouble
        // only blanks the affected row.
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn sweep_cmd(scenario: &Scenario, _base: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let rows = sweep_rows(scenario, opts.seed(scenario))?;
    let field = scenario.sweep.as_ref().expect("checked").field;
    let mut out = OutDir::create(&opts.out_dir(scenario))?;
    out.write("sweep.csv", |w| {
        writeln!(
            w,
            "{},variant,rate_per_s,s_amp_db,diagnostic",
            field.column()
        )?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                num(r.value),
                r.variant.label(),
                num(r.rate),
                num(r.s_amp),
                r.diagnostic.replace(',', ";")
            )?;
        }
        Ok(())
    })?;
    let failed = rows
        .iter()
        .filter(|r| r.rate.is_nan() && r.s_amp.is_nan())
        .count();
    Ok(RunSummary {
        line: format!(
            "{}: {} rows over {} values ({} failed)",
            scenario.name,
            rows.len(),
            rows.len()
                / scenario
                    .sweep
                    .as_ref()
                    .map_or(1, |s| s.variants.len().max(1)),
            failed
        ),
        files: out.written().to_vec(),
    })
}
