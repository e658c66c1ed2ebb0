use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rwre::environment::EnvironmentLaw;
use rwre::regeneration::TailMethod;

use crate::CliError;

/// One JSON file drives every subcommand; each command reads the shared
/// fields plus its own section and ignores the rest. Unknown keys are
/// rejected everywhere so that a typoed field can never be silently
/// dropped into a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub law: Option<EnvironmentLaw>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// 0 lets the worker pool size itself to the machine.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub env_sample: Option<EnvSampleSection>,
    #[serde(default)]
    pub pm: Option<PmSection>,
    #[serde(default)]
    pub regen: Option<RegenSection>,
    #[serde(default)]
    pub tail: Option<TailSection>,
    #[serde(default)]
    pub trap_tail: Option<TrapTailSection>,
    #[serde(default)]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub report: Option<ReportSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            law: None,
            seed: default_seed(),
            threads: 0,
            env_sample: None,
            pm: None,
            regen: None,
            tail: None,
            trap_tail: None,
            flow: None,
            report: None,
        }
    }
}

impl ExperimentConfig {
    pub fn law(&self) -> Result<&EnvironmentLaw, CliError> {
        let law = self
            .law
            .as_ref()
            .ok_or_else(|| CliError::Config("config field `law` is required for this command".into()))?;
        law.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(law)
    }
}

pub fn section<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    opt.as_ref().ok_or_else(|| {
        CliError::Config(format!("config section `{name}` is required for this command"))
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSampleSection {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// How many of the sampled vectors are echoed to samples.csv.
    #[serde(default = "default_csv_rows")]
    pub csv_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmSection {
    /// Direction of interest, one entry per lattice coordinate.
    pub l: Vec<f64>,
    /// Box depths to sweep.
    pub ls: Vec<i64>,
    /// Polynomial decay order the estimates are tested against.
    pub m: f64,
    #[serde(default = "default_pm_walks")]
    pub n_walks: usize,
    /// Explicit box width; defaults to the cubic rule capped at width_cap.
    #[serde(default)]
    pub l_tilde: Option<i64>,
    #[serde(default = "default_width_cap")]
    pub width_cap: i64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Box depths small enough for the absorbing-chain solver also get an
    /// exact annealed non-front mass from this many environments.
    #[serde(default = "default_exact_envs")]
    pub exact_envs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegenSection {
    /// Direction of transience.
    pub l: Vec<f64>,
    pub horizon: usize,
    pub n_walks: usize,
    /// Ladder spacing; defaults to just above the non-overlap bound.
    #[serde(default)]
    pub a: Option<f64>,
    /// Forward depth needed to accept a candidate with no backtrack yet.
    #[serde(default)]
    pub confirmation_depth: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    /// When present, fit synthetic Pareto draws instead of regeneration
    /// times; the known exponent makes this a calibration check.
    #[serde(default)]
    pub pareto_self_test: Option<ParetoSelfTest>,
    #[serde(default = "default_tail_method")]
    pub method: TailMethod,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoSelfTest {
    pub alpha: f64,
    #[serde(default = "default_x_m")]
    pub x_m: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapTailSection {
    /// Direction index of the heavy trap edge.
    pub e0: usize,
    /// Time grid for the survival curve.
    pub grid: Vec<u64>,
    #[serde(default = "default_trap_envs")]
    pub n_envs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub xa: Vec<i64>,
    pub xb: Vec<i64>,
    #[serde(default)]
    pub direction: usize,
    pub alpha: Vec<f64>,
    /// Box radius; defaults to the smallest radius the construction admits.
    #[serde(default)]
    pub radius: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub beta: Vec<f64>,
    #[serde(default)]
    pub theorem5_epsilon: Option<f64>,
    /// Optional negative-moment probe of the Dirichlet law with weights `beta`.
    #[serde(default)]
    pub eta: Option<EtaSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSection {
    pub alpha: f64,
    pub directions: Vec<usize>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

fn default_seed() -> u64 {
    1
}

fn default_n_samples() -> usize {
    100_000
}

fn default_csv_rows() -> usize {
    10_000
}

fn default_pm_walks() -> usize {
    10_000
}

fn default_width_cap() -> i64 {
    500
}

fn default_horizon() -> usize {
    100_000
}

fn default_exact_envs() -> usize {
    4
}

fn default_tail_method() -> TailMethod {
    TailMethod::Hill { k: None }
}

fn default_x_m() -> f64 {
    1.0
}

fn default_trap_envs() -> usize {
    1_000_000
}

pub struct Resolved {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

fn env_var(name: &str) -> Option<String> {
    env::var(name).ok().filter(|s| !s.is_empty())
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

/// Precedence at every knob: command-line flag, then RWRE_* environment
/// variable, then config file, then built-in default.
pub fn resolve(
    cli_config: Option<PathBuf>,
    cli_seed: Option<u64>,
    cli_threads: Option<usize>,
    cli_out: Option<PathBuf>,
) -> Result<Resolved, CliError> {
    let path = cli_config.or_else(|| env_var("RWRE_CONFIG").map(PathBuf::from));
    let mut config = load(path.as_deref())?;
    if let Some(raw) = env_var("RWRE_SEED") {
        config.seed = raw
            .parse()
            .map_err(|_| CliError::Config(format!("RWRE_SEED must be a nonnegative integer, got {raw:?}")))?;
    }
    if let Some(raw) = env_var("RWRE_THREADS") {
        config.threads = raw
            .parse()
            .map_err(|_| CliError::Config(format!("RWRE_THREADS must be a nonnegative integer, got {raw:?}")))?;
    }
    if let Some(seed) = cli_seed {
        config.seed = seed;
    }
    if let Some(threads) = cli_threads {
        config.threads = threads;
    }
    let out = cli_out
        .or_else(|| env_var("RWRE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Resolved { config, out })
}
