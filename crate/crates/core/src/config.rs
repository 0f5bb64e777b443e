//! Experiment configuration: TOML files with nested sections, no implicit
//! defaults for priors or temperatures, unknown keys rejected, and a stable
//! content hash embedded into every output artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ToySize,
    ToyDepth,
    Uci,
    Bandit,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ToySize => "toy-size",
            ExperimentKind::ToyDepth => "toy-depth",
            ExperimentKind::Uci => "uci",
            ExperimentKind::Bandit => "bandit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightModeChoice {
    Point,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitChoice {
    FanIn,
    FromPrior,
}

// ---------------------------------------------------------------------------
// Shared sections
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDataSection {
    pub n_points: usize,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_scale: f64,
}

/// Truncated-normal prior over a layer's active size, plus the relaxation
/// temperature.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SizePriorSection {
    pub mu: f64,
    pub sigma: f64,
    pub temperature: f64,
}

/// Prior probability of bypassing a layer, plus the gate temperature.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SkipPriorSection {
    pub pi: f64,
    pub temperature: f64,
}

// ---------------------------------------------------------------------------
// Per-experiment configs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToyNetSection {
    pub hidden_units: usize,
    pub weight_mode: WeightModeChoice,
    pub prior_sigma: f64,
    pub init_sigma: f64,
    pub obs_sigma: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToySizeConfig {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: ToyDataSection,
    pub network: ToyNetSection,
    pub size_prior: SizePriorSection,
    pub train: TrainSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DepthNetSection {
    pub hidden_layers: usize,
    pub units_per_layer: usize,
    pub weight_mode: WeightModeChoice,
    pub prior_sigma: f64,
    pub init_sigma: f64,
    pub obs_sigma: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDepthConfig {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: ToyDataSection,
    pub network: DepthNetSection,
    pub skip_prior: SkipPriorSection,
    pub train: TrainSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct UciDataSection {
    /// Directory holding `<dataset>.csv` files.
    pub dir: PathBuf,
    pub datasets: Vec<String>,
    pub target_column: String,
    pub test_fraction: f64,
    /// Generate deterministic synthetic stand-ins for missing dataset files
    /// instead of erroring (this environment cannot download the originals).
    pub synthesize_missing: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct UciNetSection {
    pub hidden_units: usize,
    pub shallow_layers: usize,
    pub deep_layers: usize,
    pub prior_sigma: f64,
    pub init_sigma: f64,
    pub obs_sigma: f64,
    pub weight_init: InitChoice,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct UciConfig {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: UciDataSection,
    pub network: UciNetSection,
    pub size_prior: SizePriorSection,
    pub skip_prior: SkipPriorSection,
    pub train: TrainSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BanditDataSection {
    pub mushroom_csv: PathBuf,
    /// Generate a deterministic synthetic mushroom table when the file is
    /// absent.
    pub synthesize_missing: bool,
    pub synth_rows: usize,
    pub synth_seed: u64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BanditAgentSection {
    pub hidden: Vec<usize>,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub init_sigma: f64,
    pub prior_sigma: f64,
    pub obs_sigma: f64,
    pub kl_scale: f64,
    pub buffer_capacity: usize,
    /// Cap on the number of recent buffer rows scored for the
    /// reward-estimate error metric.
    pub rmse_window: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: BanditDataSection,
    pub agents: Vec<String>,
    pub agent: BanditAgentSection,
    pub size_prior: SizePriorSection,
    pub interactions: usize,
    pub full_scale_interactions: usize,
}

pub const KNOWN_AGENTS: [&str; 5] = [
    "greedy",
    "epsilon-greedy",
    "thompson-rigid",
    "thompson-adaptive",
    "thompson-warmstart",
];

// ---------------------------------------------------------------------------
// Loading & validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum ExperimentConfig {
    ToySize(ToySizeConfig),
    ToyDepth(ToyDepthConfig),
    Uci(UciConfig),
    Bandit(BanditConfig),
}

#[derive(Deserialize)]
struct KindProbe {
    kind: ExperimentKind,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let probe: KindProbe = toml::from_str(text)
            .map_err(|e| Error::Config {
                issues: vec![format!("cannot determine experiment kind: {e}")],
            })?;
        let cfg = match probe.kind {
            ExperimentKind::ToySize => ExperimentConfig::ToySize(parse_strict(text)?),
            ExperimentKind::ToyDepth => ExperimentConfig::ToyDepth(parse_strict(text)?),
            ExperimentKind::Uci => ExperimentConfig::Uci(parse_strict(text)?),
            ExperimentKind::Bandit => ExperimentConfig::Bandit(parse_strict(text)?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentConfig::ToySize(_) => ExperimentKind::ToySize,
            ExperimentConfig::ToyDepth(_) => ExperimentKind::ToyDepth,
            ExperimentConfig::Uci(_) => ExperimentKind::Uci,
            ExperimentConfig::Bandit(_) => ExperimentKind::Bandit,
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            ExperimentConfig::ToySize(c) => &c.out_dir,
            ExperimentConfig::ToyDepth(c) => &c.out_dir,
            ExperimentConfig::Uci(c) => &c.out_dir,
            ExperimentConfig::Bandit(c) => &c.out_dir,
        }
    }

    pub fn seeds(&self) -> &[u64] {
        match self {
            ExperimentConfig::ToySize(c) => &c.seeds,
            ExperimentConfig::ToyDepth(c) => &c.seeds,
            ExperimentConfig::Uci(c) => &c.seeds,
            ExperimentConfig::Bandit(c) => &c.seeds,
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            ExperimentConfig::ToySize(c) => c.out_dir = dir,
            ExperimentConfig::ToyDepth(c) => c.out_dir = dir,
            ExperimentConfig::Uci(c) => c.out_dir = dir,
            ExperimentConfig::Bandit(c) => c.out_dir = dir,
        }
    }

    pub fn set_seeds(&mut self, seeds: Vec<u64>) -> Result<()> {
        if seeds.is_empty() {
            return Err(Error::Config {
                issues: vec!["seed list override is empty".into()],
            });
        }
        match self {
            ExperimentConfig::ToySize(c) => c.seeds = seeds,
            ExperimentConfig::ToyDepth(c) => c.seeds = seeds,
            ExperimentConfig::Uci(c) => c.seeds = seeds,
            ExperimentConfig::Bandit(c) => c.seeds = seeds,
        }
        Ok(())
    }

    /// The effective configuration re-serialized as TOML; this exact text is
    /// echoed into the output directory and hashed into every artifact.
    pub fn canonical_toml(&self) -> Result<String> {
        let text = match self {
            ExperimentConfig::ToySize(c) => toml::to_string_pretty(c),
            ExperimentConfig::ToyDepth(c) => toml::to_string_pretty(c),
            ExperimentConfig::Uci(c) => toml::to_string_pretty(c),
            ExperimentConfig::Bandit(c) => toml::to_string_pretty(c),
        };
        text.map_err(|e| Error::Config {
            issues: vec![format!("cannot serialize config: {e}")],
        })
    }

    /// Hex SHA-256 of the canonical TOML text.
    pub fn hash(&self) -> Result<String> {
        let text = self.canonical_toml()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.seeds().is_empty() {
            issues.push("seeds list is empty".into());
        }
        match self {
            ExperimentConfig::ToySize(c) => {
                expect_kind(&mut issues, c.kind, ExperimentKind::ToySize);
                check_toy_data(&mut issues, &c.data);
                check_train(&mut issues, &c.train);
                check_size_prior(&mut issues, &c.size_prior, c.network.hidden_units);
                check_positive(&mut issues, "network.prior_sigma", c.network.prior_sigma);
                check_positive(&mut issues, "network.init_sigma", c.network.init_sigma);
                check_positive(&mut issues, "network.obs_sigma", c.network.obs_sigma);
                if c.network.hidden_units == 0 {
                    issues.push("network.hidden_units must be positive".into());
                }
            }
            ExperimentConfig::ToyDepth(c) => {
                expect_kind(&mut issues, c.kind, ExperimentKind::ToyDepth);
                check_toy_data(&mut issues, &c.data);
                check_train(&mut issues, &c.train);
                check_skip_prior(&mut issues, &c.skip_prior);
                check_positive(&mut issues, "network.prior_sigma", c.network.prior_sigma);
                check_positive(&mut issues, "network.init_sigma", c.network.init_sigma);
                check_positive(&mut issues, "network.obs_sigma", c.network.obs_sigma);
                if c.network.hidden_layers < 2 {
                    issues.push("network.hidden_layers must be at least 2 for any bypass gate".into());
                }
                if c.network.units_per_layer == 0 {
                    issues.push("network.units_per_layer must be positive".into());
                }
            }
            ExperimentConfig::Uci(c) => {
                expect_kind(&mut issues, c.kind, ExperimentKind::Uci);
                check_train(&mut issues, &c.train);
                check_size_prior(&mut issues, &c.size_prior, c.network.hidden_units);
                check_skip_prior(&mut issues, &c.skip_prior);
                check_positive(&mut issues, "network.prior_sigma", c.network.prior_sigma);
                check_positive(&mut issues, "network.init_sigma", c.network.init_sigma);
                check_positive(&mut issues, "network.obs_sigma", c.network.obs_sigma);
                if c.data.datasets.is_empty() {
                    issues.push("data.datasets is empty".into());
                }
                if !(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0) {
                    issues.push(format!(
                        "data.test_fraction must be in (0,1), got {}",
                        c.data.test_fraction
                    ));
                }
                if c.network.hidden_units == 0 {
                    issues.push("network.hidden_units must be positive".into());
                }
                if c.network.shallow_layers == 0 || c.network.deep_layers == 0 {
                    issues.push("network layer counts must be positive".into());
                }
                if c.network.deep_layers < 2 {
                    issues.push("network.deep_layers must be at least 2 to host bypass gates".into());
                }
            }
            ExperimentConfig::Bandit(c) => {
                expect_kind(&mut issues, c.kind, ExperimentKind::Bandit);
                check_size_prior(
                    &mut issues,
                    &c.size_prior,
                    c.agent.hidden.first().copied().unwrap_or(0),
                );
                if c.agents.is_empty() {
                    issues.push("agents list is empty".into());
                }
                for a in &c.agents {
                    if !KNOWN_AGENTS.contains(&a.as_str()) {
                        issues.push(format!(
                            "unknown agent '{a}' (known: {})",
                            KNOWN_AGENTS.join(", ")
                        ));
                    }
                }
                if c.agents.iter().any(|a| a == "thompson-warmstart")
                    && !c.agents.iter().any(|a| a == "thompson-adaptive")
                {
                    issues.push("thompson-warmstart requires thompson-adaptive in the agent list".into());
                }
                if c.agent.hidden.is_empty() || c.agent.hidden.iter().any(|&h| h == 0) {
                    issues.push("agent.hidden must list positive layer widths".into());
                }
                if !(0.0..=1.0).contains(&c.agent.epsilon) {
                    issues.push(format!("agent.epsilon must be in [0,1], got {}", c.agent.epsilon));
                }
                check_positive(&mut issues, "agent.learning_rate", c.agent.learning_rate);
                check_positive(&mut issues, "agent.init_sigma", c.agent.init_sigma);
                check_positive(&mut issues, "agent.prior_sigma", c.agent.prior_sigma);
                check_positive(&mut issues, "agent.obs_sigma", c.agent.obs_sigma);
                if c.agent.kl_scale < 0.0 {
                    issues.push("agent.kl_scale must be nonnegative".into());
                }
                if c.agent.batch_size == 0 {
                    issues.push("agent.batch_size must be positive".into());
                }
                if c.agent.buffer_capacity == 0 {
                    issues.push("agent.buffer_capacity must be positive".into());
                }
                if c.agent.rmse_window == 0 {
                    issues.push("agent.rmse_window must be positive".into());
                }
                if c.data.synthesize_missing && c.data.synth_rows == 0 {
                    issues.push("data.synth_rows must be positive when synthesize_missing is set".into());
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { issues })
        }
    }
}

fn parse_strict<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config {
        issues: vec![e.to_string()],
    })
}

fn expect_kind(issues: &mut Vec<String>, got: ExperimentKind, want: ExperimentKind) {
    if got != want {
        issues.push(format!("kind is {} but config shape is {}", got.as_str(), want.as_str()));
    }
}

fn check_positive(issues: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        issues.push(format!("{name} must be positive and finite, got {v}"));
    }
}

fn check_toy_data(issues: &mut Vec<String>, d: &ToyDataSection) {
    if d.n_points == 0 {
        issues.push("data.n_points must be positive".into());
    }
    if !(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite()) {
        issues.push(format!("data.noise_sigma must be nonnegative, got {}", d.noise_sigma));
    }
}

fn check_train(issues: &mut Vec<String>, t: &TrainSection) {
    if t.batch_size == 0 {
        issues.push("train.batch_size must be positive".into());
    }
    check_positive(issues, "train.learning_rate", t.learning_rate);
    if !(t.kl_scale >= 0.0 && t.kl_scale.is_finite()) {
        issues.push(format!("train.kl_scale must be nonnegative, got {}", t.kl_scale));
    }
}

fn check_size_prior(issues: &mut Vec<String>, p: &SizePriorSection, k: usize) {
    check_positive(issues, "size_prior.sigma", p.sigma);
    check_positive(issues, "size_prior.temperature", p.temperature);
    if !p.mu.is_finite() {
        issues.push(format!("size_prior.mu must be finite, got {}", p.mu));
    }
    if k > 0 && (p.mu < 1.0 || p.mu > k as f64) {
        issues.push(format!(
            "size_prior.mu = {} lies outside the unit grid 1..={k}",
            p.mu
        ));
    }
}

fn check_skip_prior(issues: &mut Vec<String>, p: &SkipPriorSection) {
    if !(p.pi > 0.0 && p.pi < 1.0) {
        issues.push(format!("skip_prior.pi must be in (0,1), got {}", p.pi));
    }
    check_positive(issues, "skip_prior.temperature", p.temperature);
}

/// Parse a comma-delimited seed list (CLI override).
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let seeds: std::result::Result<Vec<u64>, _> = text
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect();
    seeds.map_err(|e| Error::Config {
        issues: vec![format!("bad seed list '{text}': {e}")],
    })
}
