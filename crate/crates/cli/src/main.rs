use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paramp::presets;
use paramp_cli::config::{load, Scenario};
use paramp_cli::error::{CliError, Result};
use paramp_cli::pipeline::{self, RunOptions, RunSummary};
use paramp_cli::sweep;

#[derive(Parser, Debug)]
#[command(
    name = "paramp",
    version,
    about = "Simulate and optimize a parametrically driven cavity/spin amplifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (default: out/<scenario name>).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Base seed for optimizer starts (overrides the scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Run over 10^4 sum periods with a free sample per grid step.
    #[arg(long)]
    full_horizon: bool,
    /// Compare the gradient with finite differences and write gradient_audit.csv.
    #[arg(long)]
    audit_gradient: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Propagate the covariance under the scenario's control.
    Simulate(Common),
    /// Optimize the drive.
    Optimize(Common),
    /// Spectrum (and optional dominant harmonics) of the scenario's control.
    Spectrum(Common),
    /// Keep the dominant harmonics of an optimized or given control.
    Filter(Common),
    /// Sweep one parameter over drive variants.
    Sweep(Common),
    /// Built-in parameter presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand, Debug)]
enum PresetAction {
    List,
}

type Pipeline = fn(&Scenario, &std::path::Path, &RunOptions) -> Result<RunSummary>;

fn run(cli: Cli) -> Result<Option<RunSummary>> {
    let (common, f): (Common, Pipeline) = match cli.command {
        Command::Presets {
            action: PresetAction::List,
        } => {
            list_presets();
            return Ok(None);
        }
        Command::Simulate(c) => (c, pipeline::simulate),
        Command::Optimize(c) => (c, |s, _, o| pipeline::optimize_cmd(s, o)),
        Command::Spectrum(c) => (c, pipeline::spectrum),
        Command::Filter(c) => (c, pipeline::filter_cmd),
        Command::Sweep(c) => (c, sweep::sweep_cmd),
    };
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Config("--workers: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--workers: {e}")))?;
    }
    let (scenario, base) = load(&common.config)?;
    let opts = RunOptions {
        out: common.out,
        seed: common.seed,
        full_horizon: common.full_horizon,
        audit_gradient: common.audit_gradient,
    };
    f(&scenario, &base, &opts).map(Some)
}

fn list_presets() {
    println!("name,omega_c_hz,omega_s_hz,g_hz,gamma_hz,kappa_hz,lambda_hz,temperature_k,note");
    let tau = std::f64::consts::TAU;
    for p in presets::all() {
        let s = &p.params;
        println!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            p.name,
            s.omega_c / tau,
            s.omega_s / tau,
            s.g / tau,
            s.gamma / tau,
            s.kappa / tau,
            s.lambda_drive / tau,
            s.temperature,
            p.note
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Some(summary)) => {
            println!("{}", summary.line);
            for f in &summary.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
