//! Scenario files: TOML with frequencies in Hz, unknown keys rejected.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use paramp::{presets, SystemParams};
use serde::Deserialize;

use crate::error::{CliError, Result};

fn default_spt() -> usize {
    40
}
fn default_seed() -> u64 {
    1
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Base parameter set; `[params]` entries override it.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default = "default_spt")]
    pub samples_per_tp: usize,
    /// Seed of the first random start; further starts use the following integers.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialState,
    pub horizon: Horizon,
    /// Steps between rows of `trajectory.csv` (default: one row per `t_p`).
    #[serde(default)]
    pub record_stride: Option<usize>,
    #[serde(default)]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "Artifact::all")]
    pub outputs: Vec<Artifact>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub omega_c_hz: Option<f64>,
    pub omega_s_hz: Option<f64>,
    pub g_hz: Option<f64>,
    pub gamma_hz: Option<f64>,
    pub kappa_hz: Option<f64>,
    pub lambda_hz: Option<f64>,
    pub temperature_k: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Thermal,
    Vacuum,
}

/// Length of a run. `periods` counts difference periods `2π/ω₋`,
/// `tp_periods` counts sum periods `2π/ω₊`.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Horizon {
    Periods(u64),
    TpPeriods(u64),
    Seconds(f64),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    /// `amplitude · sin(2π freq t + phase)`; `freq_hz` defaults to `ω₊/2π`.
    Sinusoidal {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        freq_hz: Option<f64>,
    },
    /// `sign(sin(2π freq t + phase))`.
    BangBang {
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        freq_hz: Option<f64>,
    },
    /// `Σ aᵢ cos(qᵢ ω₋ t + φᵢ)`.
    MultiMode {
        q: Vec<u32>,
        a: Vec<f64>,
        phi: Vec<f64>,
        #[serde(default)]
        omega_minus_hz: Option<f64>,
    },
    /// One of the published smoothed sets: `amp-m2`, `amp-m4`, `sqz-m6`.
    Published { set: String },
    /// `tanh(Σ aₙ sin(nω₋t) + bₙ cos(nω₋t))`.
    FourierTanh {
        a: Vec<f64>,
        b: Vec<f64>,
        #[serde(default)]
        omega_minus_hz: Option<f64>,
    },
    /// Samples read from a one-column CSV (header `f`), repeated cyclically.
    /// `dt_s` defaults to `t_p / samples_per_tp`.
    Samples {
        path: PathBuf,
        #[serde(default)]
        dt_s: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParametrizationKind {
    #[default]
    FourierTanh,
    PiecewiseTanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConfig {
    Maximize,
    Minimize,
}

impl From<DirectionConfig> for paramp::Direction {
    fn from(d: DirectionConfig) -> Self {
        match d {
            DirectionConfig::Maximize => paramp::Direction::MaximizeVariance,
            DirectionConfig::Minimize => paramp::Direction::MinimizeVariance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub parametrization: ParametrizationKind,
    #[serde(default = "OptimizerConfig::default_harmonics")]
    pub n_harmonics: usize,
    pub direction: DirectionConfig,
    /// Number of seeded random starts.
    #[serde(default = "OptimizerConfig::default_starts")]
    pub starts: usize,
    #[serde(default = "OptimizerConfig::default_scale")]
    pub init_scale: f64,
    /// Extra start encoding `amplitude · sin(ω₊ t)` inside the tanh.
    #[serde(default)]
    pub sinusoidal_start: Option<f64>,
    #[serde(default = "OptimizerConfig::default_iters")]
    pub max_iters: usize,
    #[serde(default = "OptimizerConfig::default_memory")]
    pub memory: usize,
    #[serde(default = "OptimizerConfig::default_grad_tol")]
    pub grad_tol: f64,
    /// Components compared by `--audit-gradient`.
    #[serde(default = "OptimizerConfig::default_audit")]
    pub audit_components: usize,
}

impl OptimizerConfig {
    fn default_harmonics() -> usize {
        100
    }
    fn default_starts() -> usize {
        5
    }
    fn default_scale() -> f64 {
        paramp::optimizer::DEFAULT_INIT_SCALE
    }
    fn default_iters() -> usize {
        500
    }
    fn default_memory() -> usize {
        10
    }
    fn default_grad_tol() -> f64 {
        1e-8
    }
    fn default_audit() -> usize {
        12
    }

    pub fn lbfgs(&self) -> paramp::LbfgsOptions {
        paramp::LbfgsOptions {
            memory: self.memory,
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub m: usize,
    #[serde(default)]
    pub refit: bool,
    /// Control CSV spanning whole difference periods; without it the
    /// `[optimizer]` section is run first.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub input_dt_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepField {
    LambdaHz,
    TemperatureK,
    GHz,
    GammaHz,
    KappaHz,
}

impl SweepField {
    pub fn column(&self) -> &'static str {
        match self {
            SweepField::LambdaHz => "lambda_hz",
            SweepField::TemperatureK => "temperature_k",
            SweepField::GHz => "g_hz",
            SweepField::GammaHz => "gamma_hz",
            SweepField::KappaHz => "kappa_hz",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sinusoidal,
    BangBang,
    Optimal,
    /// Published two-mode set.
    SmoothedM2,
    /// Published four-mode set.
    SmoothedM4,
    /// Two dominant harmonics of the point's optimum, re-fitted.
    FilteredM2,
    FilteredM4,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Sinusoidal => "sinusoidal",
            Variant::BangBang => "bang_bang",
            Variant::Optimal => "optimal",
            Variant::SmoothedM2 => "smoothed_m2",
            Variant::SmoothedM4 => "smoothed_m4",
            Variant::FilteredM2 => "filtered_m2",
            Variant::FilteredM4 => "filtered_m4",
        }
    }

    fn defaults() -> Vec<Variant> {
        vec![
            Variant::Sinusoidal,
            Variant::BangBang,
            Variant::Optimal,
            Variant::SmoothedM2,
            Variant::SmoothedM4,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub field: SweepField,
    pub values: Vec<f64>,
    #[serde(default = "Variant::defaults")]
    pub variants: Vec<Variant>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Trajectory,
    Envelope,
    Metrics,
    Control,
    Spectrum,
    Report,
}

impl Artifact {
    pub fn all() -> Vec<Artifact> {
        vec![
            Artifact::Trajectory,
            Artifact::Envelope,
            Artifact::Metrics,
            Artifact::Control,
            Artifact::Spectrum,
            Artifact::Report,
        ]
    }
}

/// Parses a scenario; errors carry the path of the offending field.
pub fn parse(text: &str) -> Result<Scenario> {
    let de = toml::Deserializer::new(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().trim().to_string();
        if path.is_empty() || path == "." {
            CliError::Config(msg)
        } else {
            CliError::Config(format!("{path}: {msg}"))
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads and parses a scenario file. Relative paths inside it resolve
/// against the file's directory.
pub fn load(path: &Path) -> Result<(Scenario, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let scenario = parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((scenario, base))
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.preset {
            if presets::by_name(p).is_none() {
                let names: Vec<_> = presets::all().iter().map(|p| p.name).collect();
                return Err(config_err(format!(
                    "preset: unknown preset {p:?} (known: {})",
                    names.join(", ")
                )));
            }
        }
        if self.samples_per_tp < 2 {
            return Err(config_err("samples_per_tp: must be at least 2"));
        }
        match self.horizon {
            Horizon::Periods(0) | Horizon::TpPeriods(0) => {
                return Err(config_err("horizon: must be positive"))
            }
            Horizon::Seconds(s) if !(s > 0.0 && s.is_finite()) => {
                return Err(config_err("horizon.seconds: must be positive"))
            }
            _ => {}
        }
        if self.record_stride == Some(0) {
            return Err(config_err("record_stride: must be positive"));
        }
        if let Some(o) = &self.optimizer {
            if o.starts == 0 && o.sinusoidal_start.is_none() {
                return Err(config_err("optimizer.starts: need at least one start"));
            }
            if o.n_harmonics == 0 {
                return Err(config_err("optimizer.n_harmonics: must be positive"));
            }
        }
        if let Some(f) = &self.filter {
            if f.m == 0 {
                return Err(config_err("filter.m: must be at least 1"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(config_err("sweep.values: need at least one value"));
            }
            if s.variants.is_empty() {
                return Err(config_err("sweep.variants: need at least one variant"));
            }
            let needs_opt = s.variants.iter().any(|v| {
                matches!(
                    v,
                    Variant::Optimal | Variant::FilteredM2 | Variant::FilteredM4
                )
            });
            if needs_opt && self.optimizer.is_none() {
                return Err(config_err(
                    "sweep.variants: optimal/filtered variants need an [optimizer] section",
                ));
            }
        }
        self.params()?;
        Ok(())
    }

    /// System parameters: the preset (if any) with `[params]` overrides applied.
    pub fn params(&self) -> Result<SystemParams> {
        let base = self
            .preset
            .as_deref()
            .and_then(presets::by_name)
            .map(|p| p.params);
        let pick = |v: Option<f64>, from_base: Option<f64>, key: &str| {
            v.or(from_base).ok_or_else(|| {
                config_err(format!("params.{key}: required when no preset is given"))
            })
        };
        let b = base.as_ref();
        let p = &self.params;
        let params = SystemParams::from_hz(
            pick(p.omega_c_hz, b.map(|b| b.omega_c / TAU), "omega_c_hz")?,
            pick(p.omega_s_hz, b.map(|b| b.omega_s / TAU), "omega_s_hz")?,
            pick(p.g_hz, b.map(|b| b.g / TAU), "g_hz")?,
            pick(p.gamma_hz, b.map(|b| b.gamma / TAU), "gamma_hz")?,
            pick(p.kappa_hz, b.map(|b| b.kappa / TAU), "kappa_hz")?,
            pick(p.lambda_hz, b.map(|b| b.lambda_drive / TAU), "lambda_hz")?,
            pick(p.temperature_k, b.map(|b| b.temperature), "temperature_k")?,
        )
        .map_err(|e| config_err(format!("params: {e}")))?;
        Ok(params)
    }

    /// Horizon in seconds for the given parameters.
    pub fn horizon_seconds(&self, params: &SystemParams) -> f64 {
        let df = params.derived();
        match self.horizon {
            Horizon::Periods(k) => k as f64 * df.t_minus,
            Horizon::TpPeriods(k) => k as f64 * df.t_p,
            Horizon::Seconds(s) => s,
        }
    }

    pub fn wants(&self, a: Artifact) -> bool {
        self.outputs.contains(&a)
    }
}

/// Returns `params` with one field replaced (Hz or kelvin, as named).
pub fn with_field(params: &SystemParams, field: SweepField, value: f64) -> Result<SystemParams> {
    let hz = |v: f64| v * TAU;
    let mut p = *params;
    match field {
        SweepField::LambdaHz => p.lambda_drive = hz(value),
        SweepField::TemperatureK => p.temperature = value,
        SweepField::GHz => p.g = hz(value),
        SweepField::GammaHz => p.gamma = hz(value),
        SweepField::KappaHz => p.kappa = hz(value),
    }
    p.validate()
        .map_err(|e| config_err(format!("sweep value {value}: {e}")))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
preset = "fig1-global-20mK"
horizon = { periods = 3 }
[control]
kind = "sinusoidal"
"#;

    #[test]
    fn minimal_scenario_parses() {
        let s = parse(MINIMAL).unwrap();
        assert_eq!(s.samples_per_tp, 40);
        assert_eq!(s.initial, InitialState::Thermal);
        assert_eq!(s.horizon, Horizon::Periods(3));
        let p = s.params().unwrap();
        assert!((p.lambda_drive / TAU - 1.0e9).abs() < 1e-3);
    }

    #[test]
    fn unknown_field_is_reported_with_path() {
        let text = MINIMAL.replace("kind = \"sinusoidal\"", "kind = \"sinusoidal\"\nampl = 0.5");
        match parse(&text) {
            Err(CliError::Config(msg)) => assert!(msg.contains("ampl"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("name = \"t\"", "name = \"t\"\nbogus = 1");
        assert!(matches!(parse(&text), Err(CliError::Config(m)) if m.contains("bogus")));
    }

    #[test]
    fn bad_values_are_config_errors() {
        let text = MINIMAL.replace("periods = 3", "periods = 0");
        assert!(matches!(parse(&text), Err(CliError::Config(_))));
        let text = MINIMAL.replace("fig1-global-20mK", "fig1-global");
        assert!(matches!(parse(&text), Err(CliError::Config(m)) if m.contains("fig1-global-10mK")));
        let text = MINIMAL.replace("preset = \"fig1-global-20mK\"", "");
        assert!(matches!(parse(&text), Err(CliError::Config(m)) if m.contains("omega_c_hz")));
        let text = MINIMAL.replace(
            "horizon = { periods = 3 }",
            "horizon = { periods = 3, seconds = 1.0 }",
        );
        assert!(matches!(parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn sweep_needs_optimizer_for_optimal_variant() {
        let text = format!("{MINIMAL}\n[sweep]\nfield = \"lambda_hz\"\nvalues = [1e9, 2e9]\n");
        assert!(matches!(parse(&text), Err(CliError::Config(m)) if m.contains("optimizer")));
    }

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let text = MINIMAL.replace("horizon", "params = { temperature_k = 0.5 }\nhorizon");
        let p = parse(&text).unwrap().params().unwrap();
        assert_eq!(p.temperature, 0.5);
        let q = with_field(&p, SweepField::LambdaHz, 0.75e9).unwrap();
        assert!((q.lambda_drive / TAU - 0.75e9).abs() < 1e-3);
        assert!(with_field(&p, SweepField::LambdaHz, 4.0e9).is_err());
    }
}
