//! Experiment commands behind the CLI subcommands: toy size/depth studies,
//! the UCI shallow/deep × rigid/adaptive comparison, and the mushroom bandit
//! suite. Every artifact embeds the config hash, seed, and code version, and
//! reruns with the same hash and seeds are byte-identical.

use std::fs::File;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bandit::{
    run_bandit, warmstart_hidden, AgentKind, AgentSettings, BanditAgent, MushroomBandit,
};
use crate::config::{
    BanditConfig, ExperimentConfig, InitChoice, ToyDepthConfig, ToySizeConfig, UciConfig,
    WeightModeChoice, KNOWN_AGENTS,
};
use crate::data::{
    encode_mushroom, load_csv, split, synth_mushroom_file, synth_regression, toy_periodic,
    write_regression_csv,
};
use crate::distributions::{size_probs, TruncNormSizeParams};
use crate::error::{Error, Result};
use crate::layers::{
    Activation, Likelihood, MlpConfig, Network, SizePlan, SkipPlan, WeightInit, WeightMode,
};
use crate::predictive::{predict, rmse, test_loglik};
use crate::tensor::Tensor;
use crate::training::{fit_with, FitData, TrainConfig};

/// Run the experiment a parsed config describes. `full_scale` only affects
/// the bandit command (30k interactions instead of the desk-scale default).
pub fn run_experiment(cfg: &ExperimentConfig, full_scale: bool) -> Result<()> {
    match cfg {
        ExperimentConfig::ToySize(c) => cmd_toy_size(c).map(|_| ()),
        ExperimentConfig::ToyDepth(c) => cmd_toy_depth(c).map(|_| ()),
        ExperimentConfig::Uci(c) => cmd_uci(c).map(|_| ()),
        ExperimentConfig::Bandit(c) => cmd_bandit(c, full_scale).map(|_| ()),
    }
}

// ---------------------------------------------------------------------------
// Artifact plumbing
// ---------------------------------------------------------------------------

/// Reproducibility stamp written as `#`-comment lines at the top of every
/// CSV artifact.
#[derive(Clone, Debug)]
struct Stamp {
    config_hash: String,
    version: &'static str,
}

impl Stamp {
    fn new(config_hash: String) -> Stamp {
        Stamp {
            config_hash,
            version: crate::VERSION,
        }
    }

    fn open_csv(&self, path: &Path, seed: Option<u64>, seeds: Option<&[u64]>) -> Result<csv::Writer<File>> {
        let mut file = File::create(path)?;
        writeln!(file, "# config_hash={}", self.config_hash)?;
        writeln!(file, "# version={}", self.version)?;
        if let Some(s) = seed {
            writeln!(file, "# seed={s}")?;
        }
        if let Some(list) = seeds {
            let joined: Vec<String> = list.iter().map(|s| s.to_string()).collect();
            writeln!(file, "# seeds={}", joined.join(","))?;
        }
        Ok(csv::Writer::from_writer(file))
    }
}

fn seed_dir(out_dir: &Path, seed: u64) -> Result<PathBuf> {
    let dir = out_dir.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_config_echo(out_dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config_echo.toml"), cfg.canonical_toml()?)?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn weight_mode(choice: WeightModeChoice) -> WeightMode {
    match choice {
        WeightModeChoice::Point => WeightMode::Point,
        WeightModeChoice::Gaussian => WeightMode::Gaussian,
    }
}

/// Derived seed streams keep initialization, fitting, and evaluation noise
/// from reusing one another's generator sequence.
fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

fn write_arch_json(path: &Path, net: &Network, stamp: &Stamp, seed: u64) -> Result<()> {
    let decoded = net.decode();
    let doc = serde_json::json!({
        "config_hash": stamp.config_hash,
        "version": stamp.version,
        "seed": seed,
        "architecture": net.describe(),
        "decoded_sizes": decoded.sizes,
        "dropped_layers": decoded.dropped,
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc).map_err(Error::Json)?)?;
    Ok(())
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Toy size
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ToySizeSeedResult {
    pub seed: u64,
    pub decoded_size: usize,
    pub final_mu: f64,
    pub final_sigma: f64,
    pub train_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct ToySizeOutcome {
    pub per_seed: Vec<ToySizeSeedResult>,
}

/// Fit a single hidden layer whose active size is learned, per seed; emit the
/// size-posterior trajectory (with the prior as the epoch-0 row), mean-fit
/// snapshots on a fixed input grid at epochs {1, mid, final}, the decoded
/// architecture, and the full run log.
pub fn cmd_toy_size(cfg: &ToySizeConfig) -> Result<ToySizeOutcome> {
    let wrapped = ExperimentConfig::ToySize(cfg.clone());
    wrapped.validate()?;
    let stamp = Stamp::new(wrapped.hash()?);
    write_config_echo(&cfg.out_dir, &wrapped)?;

    let k = cfg.network.hidden_units;
    let grid_row = Tensor::linspace(-2.0, 2.0, 201);
    let grid = Tensor::new(grid_row.len(), 1, grid_row.data().to_vec())?;
    let mid_epoch = cfg.train.epochs.div_ceil(2);
    let mut per_seed = Vec::new();

    for &seed in &cfg.seeds {
        let started = std::time::Instant::now();
        let dir = seed_dir(&cfg.out_dir, seed)?;
        let ds = toy_periodic(cfg.data.n_points, cfg.data.noise_sigma, seed)?;

        let mut init_rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, 1));
        let mut net = Network::mlp(
            &MlpConfig {
                in_dim: 1,
                hidden: vec![k],
                out_dim: 1,
                hidden_activation: Activation::Relu,
                weight_mode: weight_mode(cfg.network.weight_mode),
                likelihood: Likelihood::Gaussian {
                    obs_sigma: cfg.network.obs_sigma,
                },
                prior_sigma: cfg.network.prior_sigma,
                weight_init: WeightInit::FanIn {
                    sigma: cfg.network.init_sigma,
                },
                size_plan: Some(SizePlan {
                    prior_mu: cfg.size_prior.mu,
                    prior_sigma: cfg.size_prior.sigma,
                    temperature: cfg.size_prior.temperature,
                }),
                skip_plan: None,
            },
            &mut init_rng,
        )?;

        let mut trajectory = stamp.open_csv(&dir.join("trajectory.csv"), Some(seed), None)?;
        let mut header = vec!["epoch".to_string(), "mu".to_string(), "sigma".to_string()];
        header.extend((1..=k).map(|i| format!("pi_{i}")));
        trajectory.write_record(&header)?;
        let prior = TruncNormSizeParams::from_moments(cfg.size_prior.mu, cfg.size_prior.sigma, k)?;
        let mut row = vec!["0".to_string(), num(cfg.size_prior.mu), num(cfg.size_prior.sigma)];
        row.extend(size_probs(&prior).data().iter().map(|&p| num(p)));
        trajectory.write_record(&row)?;

        let mut snapshots = stamp.open_csv(&dir.join("snapshots.csv"), Some(seed), None)?;
        snapshots.write_record(["epoch", "x", "prediction"])?;

        let mut train_cfg = TrainConfig::new(
            cfg.train.epochs,
            cfg.train.batch_size,
            cfg.train.learning_rate,
            seed,
        );
        train_cfg.kl_scale = cfg.train.kl_scale;
        train_cfg.tau_size = cfg.size_prior.temperature;

        let mut snapshot_rows: Vec<(usize, Tensor)> = Vec::new();
        let mut hook_err: Option<Error> = None;
        let log = fit_with(&mut net, &FitData::train_only(&ds.features, &ds.targets), &train_cfg, |net, rec| {
            if hook_err.is_some() {
                return;
            }
            let epoch = rec.epoch + 1; // records are 0-indexed; artifacts count epochs from 1
            let post = &rec.size_posteriors[0];
            let mut row = vec![epoch.to_string(), num(post.mu), num(post.sigma)];
            row.extend(post.pi.iter().map(|&p| num(p)));
            if let Err(e) = trajectory.write_record(&row) {
                hook_err = Some(Error::Csv(e));
                return;
            }
            if epoch == 1 || epoch == mid_epoch || epoch == cfg.train.epochs {
                match net.forward_mean_field(&grid) {
                    Ok(pred) => snapshot_rows.push((epoch, pred)),
                    Err(e) => hook_err = Some(e),
                }
            }
        })?;
        if let Some(e) = hook_err {
            return Err(e);
        }
        for (epoch, pred) in &snapshot_rows {
            for r in 0..grid.rows() {
                snapshots.write_record([
                    epoch.to_string(),
                    num(grid.get(r, 0)),
                    num(pred.get(r, 0)),
                ])?;
            }
        }
        trajectory.flush()?;
        snapshots.flush()?;

        let run_id = format!("toy-size-seed{seed}");
        let train_rmse = log.epochs.last().map(|r| r.train_metric).unwrap_or(f64::NAN);
        log.with_identity(&run_id, &stamp.config_hash)
            .write_jsonl(&dir.join("run.jsonl"))?;
        write_arch_json(&dir.join("arch.json"), &net, &stamp, seed)?;

        let adapter = net.layers[0]
            .size
            .as_ref()
            .expect("toy size network carries a size adapter");
        let decoded_size = net.decode().sizes[0].expect("size adapter decodes");
        eprintln!(
            "[toy-size] seed {seed}: decoded size {decoded_size} (mu={:.2}, sigma={:.2}) in {:.1}s",
            adapter.post.mu,
            adapter.post.sigma(),
            started.elapsed().as_secs_f64()
        );
        per_seed.push(ToySizeSeedResult {
            seed,
            decoded_size,
            final_mu: adapter.post.mu,
            final_sigma: adapter.post.sigma(),
            train_rmse,
        });
    }

    let mut summary = stamp.open_csv(&cfg.out_dir.join("summary.csv"), None, Some(&cfg.seeds))?;
    summary.write_record(["seed", "decoded_size", "final_mu", "final_sigma", "train_rmse"])?;
    for r in &per_seed {
        summary.write_record([
            r.seed.to_string(),
            r.decoded_size.to_string(),
            num(r.final_mu),
            num(r.final_sigma),
            num(r.train_rmse),
        ])?;
    }
    summary.flush()?;
    Ok(ToySizeOutcome { per_seed })
}

// ---------------------------------------------------------------------------
// Toy depth
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ToyDepthSeedResult {
    pub seed: u64,
    /// Final bypass probability per gated layer, in layer order.
    pub final_skip_pis: Vec<f64>,
    pub kept_hidden_layers: usize,
    pub high_bypass_count: usize,
    pub train_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct ToyDepthOutcome {
    pub per_seed: Vec<ToyDepthSeedResult>,
}

/// Fit a deep narrow network whose square hidden layers carry bypass gates;
/// emit the per-gate bypass-probability trajectory (prior as epoch 0) and
/// the decoded depth.
pub fn cmd_toy_depth(cfg: &ToyDepthConfig) -> Result<ToyDepthOutcome> {
    let wrapped = ExperimentConfig::ToyDepth(cfg.clone());
    wrapped.validate()?;
    let stamp = Stamp::new(wrapped.hash()?);
    write_config_echo(&cfg.out_dir, &wrapped)?;

    let n_gates = cfg.network.hidden_layers - 1; // the first hidden layer changes width, so it has no gate
    let mut per_seed = Vec::new();

    for &seed in &cfg.seeds {
        let started = std::time::Instant::now();
        let dir = seed_dir(&cfg.out_dir, seed)?;
        let ds = toy_periodic(cfg.data.n_points, cfg.data.noise_sigma, seed)?;

        let mut init_rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, 2));
        let mut net = Network::mlp(
            &MlpConfig {
                in_dim: 1,
                hidden: vec![cfg.network.units_per_layer; cfg.network.hidden_layers],
                out_dim: 1,
                hidden_activation: Activation::Relu,
                weight_mode: weight_mode(cfg.network.weight_mode),
                likelihood: Likelihood::Gaussian {
                    obs_sigma: cfg.network.obs_sigma,
                },
                prior_sigma: cfg.network.prior_sigma,
                weight_init: WeightInit::FanIn {
                    sigma: cfg.network.init_sigma,
                },
                size_plan: None,
                skip_plan: Some(SkipPlan {
                    prior_prob: cfg.skip_prior.pi,
                    temperature: cfg.skip_prior.temperature,
                }),
            },
            &mut init_rng,
        )?;
        let gate_count = net.layers.iter().filter(|l| l.skip.is_some()).count();
        debug_assert_eq!(gate_count, n_gates);

        let mut trajectory = stamp.open_csv(&dir.join("trajectory.csv"), Some(seed), None)?;
        let mut header = vec!["epoch".to_string()];
        header.extend((1..=n_gates).map(|i| format!("pi_{i}")));
        trajectory.write_record(&header)?;
        let mut prior_row = vec!["0".to_string()];
        prior_row.extend(std::iter::repeat(num(cfg.skip_prior.pi)).take(n_gates));
        trajectory.write_record(&prior_row)?;

        let mut train_cfg = TrainConfig::new(
            cfg.train.epochs,
            cfg.train.batch_size,
            cfg.train.learning_rate,
            seed,
        );
        train_cfg.kl_scale = cfg.train.kl_scale;
        train_cfg.tau_depth = cfg.skip_prior.temperature;

        let mut hook_err: Option<Error> = None;
        let log = fit_with(&mut net, &FitData::train_only(&ds.features, &ds.targets), &train_cfg, |_, rec| {
            if hook_err.is_some() {
                return;
            }
            let mut row = vec![(rec.epoch + 1).to_string()];
            row.extend(rec.skip_probs.iter().map(|s| num(s.pi)));
            if let Err(e) = trajectory.write_record(&row) {
                hook_err = Some(Error::Csv(e));
            }
        })?;
        if let Some(e) = hook_err {
            return Err(e);
        }
        trajectory.flush()?;

        let run_id = format!("toy-depth-seed{seed}");
        let train_rmse = log.epochs.last().map(|r| r.train_metric).unwrap_or(f64::NAN);
        log.with_identity(&run_id, &stamp.config_hash)
            .write_jsonl(&dir.join("run.jsonl"))?;
        write_arch_json(&dir.join("arch.json"), &net, &stamp, seed)?;

        let final_skip_pis: Vec<f64> = net
            .layers
            .iter()
            .filter_map(|l| l.skip.as_ref().map(|s| crate::math::sigmoid(s.logit)))
            .collect();
        let dropped = net.decode().dropped.iter().filter(|&&d| d).count();
        let kept_hidden_layers = cfg.network.hidden_layers - dropped;
        let high_bypass_count = final_skip_pis.iter().filter(|&&p| p > 0.8).count();
        eprintln!(
            "[toy-depth] seed {seed}: {high_bypass_count}/{n_gates} gates above 0.8, {kept_hidden_layers} hidden layers kept, in {:.1}s",
            started.elapsed().as_secs_f64()
        );
        per_seed.push(ToyDepthSeedResult {
            seed,
            final_skip_pis,
            kept_hidden_layers,
            high_bypass_count,
            train_rmse,
        });
    }

    let mut summary = stamp.open_csv(&cfg.out_dir.join("summary.csv"), None, Some(&cfg.seeds))?;
    summary.write_record([
        "seed",
        "kept_hidden_layers",
        "bypassed_layers",
        "high_bypass_count",
        "train_rmse",
    ])?;
    for r in &per_seed {
        summary.write_record([
            r.seed.to_string(),
            r.kept_hidden_layers.to_string(),
            (cfg.network.hidden_layers - r.kept_hidden_layers).to_string(),
            r.high_bypass_count.to_string(),
            num(r.train_rmse),
        ])?;
    }
    summary.flush()?;
    Ok(ToyDepthOutcome { per_seed })
}

// ---------------------------------------------------------------------------
// UCI comparison
// ---------------------------------------------------------------------------

pub const UCI_VARIANTS: [&str; 4] = ["shallow-rigid", "shallow-adaptive", "deep-rigid", "deep-adaptive"];

/// Row shapes for the synthetic stand-in tables, mirroring the originals'
/// sizes at desk scale.
// Noise levels sit on the standardized-target scale and mirror how noisy each
// real table is in practice (wine is mostly noise, energy and yacht are nearly
// deterministic), so stand-ins exercise the same overfitting pressures.
const SYNTH_RECIPES: [(&str, usize, usize, f64, u64); 5] = [
    ("boston", 506, 13, 0.40, 101),
    ("concrete", 500, 8, 0.30, 102),
    ("energy", 400, 8, 0.06, 103),
    ("wine", 480, 11, 0.80, 104),
    ("yacht", 308, 6, 0.07, 105),
];

#[derive(Clone, Debug)]
pub struct UciRunRow {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
    /// Test RMSE in raw target units.
    pub rmse: f64,
    /// Per-point predictive test log-likelihood in raw target units.
    pub test_loglik: f64,
    pub decoded_arch: String,
}

#[derive(Clone, Debug)]
pub struct UciTableRow {
    pub dataset: String,
    pub variant: String,
    pub n_seeds: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub loglik_mean: f64,
    pub loglik_std: f64,
}

#[derive(Clone, Debug)]
pub struct UciOutcome {
    pub rows: Vec<UciRunRow>,
    pub table: Vec<UciTableRow>,
}

fn ensure_uci_dataset(dir: &Path, name: &str, synthesize: bool) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.csv"));
    if path.exists() {
        return Ok(path);
    }
    if !synthesize {
        return Err(Error::InvalidParam(format!(
            "dataset file {} is missing (set data.synthesize_missing to generate a stand-in)",
            path.display()
        )));
    }
    let recipe = SYNTH_RECIPES
        .iter()
        .find(|(n, ..)| *n == name)
        .ok_or_else(|| Error::InvalidParam(format!("no synthetic recipe for dataset '{name}'")))?;
    std::fs::create_dir_all(dir)?;
    let ds = synth_regression(name, recipe.1, recipe.2, recipe.3, recipe.4)?;
    write_regression_csv(&ds, &path)?;
    eprintln!("[uci] synthesized stand-in {} ({} rows, {} features)", path.display(), recipe.1, recipe.2);
    Ok(path)
}

fn decoded_arch_string(net: &Network) -> String {
    let decoded = net.decode();
    let parts: Vec<String> = net
        .layers
        .iter()
        .take(net.layers.len().saturating_sub(1))
        .enumerate()
        .map(|(i, layer)| {
            if decoded.dropped[i] {
                "-".to_string()
            } else {
                decoded.sizes[i].unwrap_or(layer.spec.out_dim).to_string()
            }
        })
        .collect();
    parts.join("/")
}

fn uci_variant_net(
    cfg: &UciConfig,
    variant: &str,
    in_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let (layers, adaptive) = match variant {
        "shallow-rigid" => (cfg.network.shallow_layers, false),
        "shallow-adaptive" => (cfg.network.shallow_layers, true),
        "deep-rigid" => (cfg.network.deep_layers, false),
        "deep-adaptive" => (cfg.network.deep_layers, true),
        other => return Err(Error::InvalidParam(format!("unknown variant '{other}'"))),
    };
    let weight_init = match cfg.network.weight_init {
        InitChoice::FanIn => WeightInit::FanIn {
            sigma: cfg.network.init_sigma,
        },
        InitChoice::FromPrior => WeightInit::FromPrior,
    };
    Network::mlp(
        &MlpConfig {
            in_dim,
            hidden: vec![cfg.network.hidden_units; layers],
            out_dim: 1,
            hidden_activation: Activation::Relu,
            weight_mode: WeightMode::Gaussian,
            likelihood: Likelihood::Gaussian {
                obs_sigma: cfg.network.obs_sigma,
            },
            prior_sigma: cfg.network.prior_sigma,
            weight_init,
            size_plan: adaptive.then_some(SizePlan {
                prior_mu: cfg.size_prior.mu,
                prior_sigma: cfg.size_prior.sigma,
                temperature: cfg.size_prior.temperature,
            }),
            skip_plan: adaptive.then_some(SkipPlan {
                prior_prob: cfg.skip_prior.pi,
                temperature: cfg.skip_prior.temperature,
            }),
        },
        rng,
    )
}

/// Number of posterior samples averaged for test predictions.
pub const UCI_PREDICTIVE_SAMPLES: usize = 100;

/// Train all four variants on every dataset and seed; report test RMSE and
/// predictive log-likelihood in raw target units, per run and aggregated.
pub fn cmd_uci(cfg: &UciConfig) -> Result<UciOutcome> {
    let wrapped = ExperimentConfig::Uci(cfg.clone());
    wrapped.validate()?;
    let stamp = Stamp::new(wrapped.hash()?);
    write_config_echo(&cfg.out_dir, &wrapped)?;

    let mut rows: Vec<UciRunRow> = Vec::new();
    for name in &cfg.data.datasets {
        let path = ensure_uci_dataset(&cfg.data.dir, name, cfg.data.synthesize_missing)?;
        let full = load_csv(&path, &cfg.data.target_column, false)?;
        for &seed in &cfg.seeds {
            let (train, test) = split(&full, cfg.data.test_fraction, seed)?;
            let dir = seed_dir(&cfg.out_dir, seed)?;
            for variant in UCI_VARIANTS {
                let started = std::time::Instant::now();
                let mut init_rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, 3));
                let mut net = uci_variant_net(cfg, variant, train.dim(), &mut init_rng)?;

                let mut train_cfg = TrainConfig::new(
                    cfg.train.epochs,
                    cfg.train.batch_size,
                    cfg.train.learning_rate,
                    seed,
                );
                train_cfg.kl_scale = cfg.train.kl_scale;
                train_cfg.tau_size = cfg.size_prior.temperature;
                train_cfg.tau_depth = cfg.skip_prior.temperature;

                let log = fit_with(
                    &mut net,
                    &FitData::train_only(&train.features, &train.targets),
                    &train_cfg,
                    |_, _| {},
                )?;
                let run_id = format!("{name}-{variant}-seed{seed}");
                log.with_identity(&run_id, &stamp.config_hash)
                    .write_jsonl(&dir.join(format!("{name}-{variant}.jsonl")))?;

                let mut eval_rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, 4));
                let pred = predict(&net, &test.features, UCI_PREDICTIVE_SAMPLES, &mut eval_rng)?;
                let rmse_std_units = rmse(&pred.mean, &test.targets)?;
                let obs_sigma = match net.likelihood {
                    Likelihood::Gaussian { obs_sigma } => obs_sigma,
                    Likelihood::Categorical => unreachable!("regression network"),
                };
                let loglik_std_units = test_loglik(&pred.samples, &test.targets, obs_sigma)?;
                // map standardized-space metrics back to raw target units
                let rmse_raw = rmse_std_units * test.target_std;
                let loglik_raw = loglik_std_units - test.target_std.ln();
                let decoded_arch = decoded_arch_string(&net);
                eprintln!(
                    "[uci] {name} {variant} seed {seed}: rmse {rmse_raw:.3}, loglik {loglik_raw:.3}, arch {decoded_arch}, in {:.1}s",
                    started.elapsed().as_secs_f64()
                );
                rows.push(UciRunRow {
                    dataset: name.clone(),
                    variant: variant.to_string(),
                    seed,
                    rmse: rmse_raw,
                    test_loglik: loglik_raw,
                    decoded_arch,
                });
            }
        }
    }

    let mut table = Vec::new();
    for name in &cfg.data.datasets {
        for variant in UCI_VARIANTS {
            let group: Vec<&UciRunRow> = rows
                .iter()
                .filter(|r| &r.dataset == name && r.variant == variant)
                .collect();
            let rmses: Vec<f64> = group.iter().map(|r| r.rmse).collect();
            let logliks: Vec<f64> = group.iter().map(|r| r.test_loglik).collect();
            let (rmse_mean, rmse_std) = mean_and_std(&rmses);
            let (loglik_mean, loglik_std) = mean_and_std(&logliks);
            table.push(UciTableRow {
                dataset: name.clone(),
                variant: variant.to_string(),
                n_seeds: group.len(),
                rmse_mean,
                rmse_std,
                loglik_mean,
                loglik_std,
            });
        }
    }

    let mut results = stamp.open_csv(&cfg.out_dir.join("results.csv"), None, Some(&cfg.seeds))?;
    results.write_record(["dataset", "variant", "seed", "rmse", "test_loglik", "decoded_arch"])?;
    for r in &rows {
        results.write_record([
            r.dataset.clone(),
            r.variant.clone(),
            r.seed.to_string(),
            num(r.rmse),
            num(r.test_loglik),
            r.decoded_arch.clone(),
        ])?;
    }
    results.flush()?;

    let mut table_csv = stamp.open_csv(&cfg.out_dir.join("table.csv"), None, Some(&cfg.seeds))?;
    table_csv.write_record([
        "dataset",
        "variant",
        "n_seeds",
        "rmse_mean",
        "rmse_std",
        "loglik_mean",
        "loglik_std",
    ])?;
    for r in &table {
        table_csv.write_record([
            r.dataset.clone(),
            r.variant.clone(),
            r.n_seeds.to_string(),
            num(r.rmse_mean),
            num(r.rmse_std),
            num(r.loglik_mean),
            num(r.loglik_std),
        ])?;
    }
    table_csv.flush()?;

    Ok(UciOutcome { rows, table })
}

// ---------------------------------------------------------------------------
// Bandit suite
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct BanditSummaryRow {
    pub agent: String,
    pub seed: u64,
    pub interactions: usize,
    pub final_cumulative_regret: f64,
    pub divergent_batches: usize,
    /// Hidden widths in play: decoded for the adaptive agent, inherited for
    /// the warm start, declared otherwise.
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BanditCurve {
    pub agent: String,
    pub seed: u64,
    pub cumulative_regret: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BanditOutcome {
    pub summary: Vec<BanditSummaryRow>,
    pub curves: Vec<BanditCurve>,
}

fn ensure_mushroom_file(cfg: &BanditConfig) -> Result<PathBuf> {
    let path = cfg.data.mushroom_csv.clone();
    if path.exists() {
        return Ok(path);
    }
    if !cfg.data.synthesize_missing {
        return Err(Error::InvalidParam(format!(
            "mushroom file {} is missing (set data.synthesize_missing to generate a stand-in)",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    synth_mushroom_file(&path, cfg.data.synth_rows, cfg.data.synth_seed)?;
    eprintln!("[bandit] synthesized mushroom table {} ({} rows)", path.display(), cfg.data.synth_rows);
    Ok(path)
}

fn agent_settings(cfg: &BanditConfig) -> AgentSettings {
    AgentSettings {
        hidden: cfg.agent.hidden.clone(),
        size_prior_mu: cfg.size_prior.mu,
        size_prior_sigma: cfg.size_prior.sigma,
        temperature: cfg.size_prior.temperature,
        prior_sigma: cfg.agent.prior_sigma,
        obs_sigma: cfg.agent.obs_sigma,
        init_sigma: cfg.agent.init_sigma,
        learning_rate: cfg.agent.learning_rate,
        batch_size: cfg.agent.batch_size,
        kl_scale: cfg.agent.kl_scale,
        buffer_capacity: cfg.agent.buffer_capacity,
    }
}

/// Run every configured agent on every seed. All agents of a seed face the
/// identical context sequence; the warm-started agent reuses the decoded
/// sizes of that seed's adaptive run.
pub fn cmd_bandit(cfg: &BanditConfig, full_scale: bool) -> Result<BanditOutcome> {
    let wrapped = ExperimentConfig::Bandit(cfg.clone());
    wrapped.validate()?;
    let stamp = Stamp::new(wrapped.hash()?);
    write_config_echo(&cfg.out_dir, &wrapped)?;

    let path = ensure_mushroom_file(cfg)?;
    let data = encode_mushroom(&path)?;
    let n_interactions = if full_scale {
        cfg.full_scale_interactions
    } else {
        cfg.interactions
    };

    // canonical execution order; the warm start comes last so the adaptive
    // run it reads from has finished
    let agents: Vec<&str> = KNOWN_AGENTS
        .iter()
        .copied()
        .filter(|a| cfg.agents.iter().any(|c| c == a))
        .collect();

    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(&cfg.out_dir, seed)?;
        let mut adaptive_hidden: Option<Vec<usize>> = None;
        let mut adaptive_regret: Option<f64> = None;
        for (idx, &agent_name) in agents.iter().enumerate() {
            let started = std::time::Instant::now();
            let kind = match agent_name {
                "greedy" => AgentKind::Greedy,
                "epsilon-greedy" => AgentKind::EpsilonGreedy {
                    epsilon: cfg.agent.epsilon,
                },
                "thompson-rigid" => AgentKind::ThompsonRigid,
                "thompson-adaptive" => AgentKind::ThompsonAdaptive,
                "thompson-warmstart" => AgentKind::ThompsonWarmstart {
                    hidden: adaptive_hidden.clone().ok_or_else(|| {
                        Error::InvalidParam(
                            "warm start needs the adaptive run of this seed to finish first".into(),
                        )
                    })?,
                },
                other => return Err(Error::InvalidParam(format!("unknown agent '{other}'"))),
            };
            let mut env = MushroomBandit::new(data.clone(), seed)?;
            let mut agent = BanditAgent::new(
                kind,
                agent_settings(cfg),
                env.context_dim(),
                derived_seed(seed, 10 + idx as u64),
            )?;
            let records = run_bandit(&mut env, &mut agent, n_interactions, cfg.agent.rmse_window)?;

            let mut csv = stamp.open_csv(&dir.join(format!("{agent_name}.csv")), Some(seed), None)?;
            csv.write_record([
                "step",
                "cumulative_regret",
                "reward_rmse",
                "action",
                "context_id",
                "regret",
                "realized_reward",
                "divergent_batches",
            ])?;
            for r in &records {
                csv.write_record([
                    r.step.to_string(),
                    num(r.cumulative_regret),
                    num(r.reward_rmse),
                    r.action.as_str().to_string(),
                    r.context_id.to_string(),
                    num(r.regret),
                    num(r.realized_reward),
                    r.divergent_batches.to_string(),
                ])?;
            }
            csv.flush()?;

            let final_regret = records.last().map(|r| r.cumulative_regret).unwrap_or(0.0);
            let hidden = match &agent.kind {
                AgentKind::ThompsonAdaptive => {
                    let decoded = warmstart_hidden(&agent.net)?;
                    adaptive_hidden = Some(decoded.clone());
                    adaptive_regret = Some(final_regret);
                    decoded
                }
                AgentKind::ThompsonWarmstart { hidden } => {
                    if let Some(adaptive) = adaptive_regret {
                        if final_regret > adaptive {
                            eprintln!(
                                "[bandit] note: seed {seed} warm start regret {final_regret:.1} exceeds adaptive {adaptive:.1} at this scale"
                            );
                        }
                    }
                    hidden.clone()
                }
                _ => cfg.agent.hidden.clone(),
            };
            eprintln!(
                "[bandit] {agent_name} seed {seed}: regret {final_regret:.1} over {n_interactions} steps, {} divergent batches, in {:.0}s",
                agent.divergent_batches,
                started.elapsed().as_secs_f64()
            );
            summary.push(BanditSummaryRow {
                agent: agent_name.to_string(),
                seed,
                interactions: n_interactions,
                final_cumulative_regret: final_regret,
                divergent_batches: agent.divergent_batches,
                hidden,
            });
            curves.push(BanditCurve {
                agent: agent_name.to_string(),
                seed,
                cumulative_regret: records.iter().map(|r| r.cumulative_regret).collect(),
            });
        }
    }

    let mut csv = stamp.open_csv(&cfg.out_dir.join("summary.csv"), None, Some(&cfg.seeds))?;
    csv.write_record([
        "agent",
        "seed",
        "interactions",
        "final_cumulative_regret",
        "divergent_batches",
        "hidden",
    ])?;
    for r in &summary {
        let hidden: Vec<String> = r.hidden.iter().map(|h| h.to_string()).collect();
        csv.write_record([
            r.agent.clone(),
            r.seed.to_string(),
            r.interactions.to_string(),
            num(r.final_cumulative_regret),
            r.divergent_batches.to_string(),
            hidden.join("/"),
        ])?;
    }
    csv.flush()?;

    Ok(BanditOutcome { summary, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::fixtures;

    fn tiny_toy_size(out: &Path, epochs: usize) -> ToySizeConfig {
        let text = fixtures::TOY_SIZE
            .replace("out_dir = \"runs/toy-size\"", &format!("out_dir = {:?}", out.display().to_string()))
            .replace("seeds = [1, 2, 3, 4, 5]", "seeds = [1, 2]")
            .replace("n_points = 2000", "n_points = 120")
            .replace("hidden_units = 50", "hidden_units = 8")
            .replace("mu = 1.0", "mu = 3.0")
            .replace("epochs = 8000", &format!("epochs = {epochs}"))
            .replace("batch_size = 256", "batch_size = 60");
        match ExperimentConfig::parse(&text).unwrap() {
            ExperimentConfig::ToySize(c) => c,
            _ => unreachable!(),
        }
    }

    fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_path(path)
            .unwrap();
        reader
            .records()
            .map(|r| r.unwrap().iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn toy_size_zero_epochs_emits_prior_row_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_toy_size(dir.path(), 0);
        let outcome = cmd_toy_size(&cfg).unwrap();
        assert_eq!(outcome.per_seed.len(), 2);
        // prior centered at 3 decodes to 3 before any training
        assert!(outcome.per_seed.iter().all(|r| r.decoded_size == 3));

        let traj = read_csv_rows(&dir.path().join("seed-1/trajectory.csv"));
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0][0], "0");
        let pis: Vec<f64> = traj[0][3..].iter().map(|v| v.parse::<f64>().unwrap()).collect();
        let total: f64 = pis.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let snaps = read_csv_rows(&dir.path().join("seed-1/snapshots.csv"));
        assert!(snaps.is_empty());
    }

    #[test]
    fn toy_size_artifacts_have_expected_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_toy_size(dir.path(), 4);
        let outcome = cmd_toy_size(&cfg).unwrap();
        assert_eq!(outcome.per_seed.len(), 2);

        let traj = read_csv_rows(&dir.path().join("seed-1/trajectory.csv"));
        assert_eq!(traj.len(), 5); // prior row + 4 epochs
        let snaps = read_csv_rows(&dir.path().join("seed-1/snapshots.csv"));
        // snapshots at epochs 1, 2 (mid), 4 (final)
        let epochs: std::collections::BTreeSet<String> = snaps.iter().map(|r| r[0].clone()).collect();
        assert_eq!(epochs.len(), 3);
        assert_eq!(snaps.len(), 3 * 201);
        assert!(dir.path().join("seed-1/run.jsonl").exists());
        assert!(dir.path().join("seed-1/arch.json").exists());
        assert!(dir.path().join("config_echo.toml").exists());
        let summary = read_csv_rows(&dir.path().join("summary.csv"));
        assert_eq!(summary.len(), 2);
    }

    #[test]
    fn toy_size_reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_toy_size(dir.path(), 3);
        cmd_toy_size(&cfg).unwrap();
        let first = std::fs::read(dir.path().join("seed-2/trajectory.csv")).unwrap();
        let first_summary = std::fs::read(dir.path().join("summary.csv")).unwrap();
        cmd_toy_size(&cfg).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("seed-2/trajectory.csv")).unwrap());
        assert_eq!(first_summary, std::fs::read(dir.path().join("summary.csv")).unwrap());
    }

    #[test]
    fn toy_depth_trajectory_has_gate_columns_and_prior_row() {
        let dir = tempfile::tempdir().unwrap();
        let text = fixtures::TOY_DEPTH
            .replace("out_dir = \"runs/toy-depth\"", &format!("out_dir = {:?}", dir.path().display().to_string()))
            .replace("seeds = [1, 2, 3]", "seeds = [1]")
            .replace("n_points = 2000", "n_points = 100")
            .replace("hidden_layers = 11", "hidden_layers = 4")
            .replace("epochs = 2000", "epochs = 3")
            .replace("batch_size = 256", "batch_size = 50");
        let cfg = match ExperimentConfig::parse(&text).unwrap() {
            ExperimentConfig::ToyDepth(c) => c,
            _ => unreachable!(),
        };
        let outcome = cmd_toy_depth(&cfg).unwrap();
        assert_eq!(outcome.per_seed.len(), 1);
        assert_eq!(outcome.per_seed[0].final_skip_pis.len(), 3);

        let traj = read_csv_rows(&dir.path().join("seed-1/trajectory.csv"));
        assert_eq!(traj.len(), 4); // prior + 3 epochs
        assert_eq!(traj[0], vec!["0", "0.85", "0.85", "0.85"]);
    }

    #[test]
    fn uci_emits_all_variant_rows_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let text = fixtures::UCI
            .replace("out_dir = \"runs/uci\"", &format!("out_dir = {:?}", dir.path().join("out").display().to_string()))
            .replace("dir = \"data/uci\"", &format!("dir = {:?}", data_dir.display().to_string()))
            .replace(
                r#"datasets = ["boston", "concrete", "energy", "wine", "yacht"]"#,
                r#"datasets = ["yacht"]"#,
            )
            .replace("seeds = [0, 1, 2, 3, 4]", "seeds = [0, 1]")
            .replace("epochs = 200", "epochs = 2")
            .replace("hidden_units = 50", "hidden_units = 10")
            .replace("deep_layers = 5", "deep_layers = 3")
            .replace("mu = 25.0", "mu = 5.0")
            .replace("sigma = 10.0", "sigma = 3.0");
        let cfg = match ExperimentConfig::parse(&text).unwrap() {
            ExperimentConfig::Uci(c) => c,
            _ => unreachable!(),
        };
        let outcome = cmd_uci(&cfg).unwrap();
        assert_eq!(outcome.rows.len(), 8); // 1 dataset x 2 seeds x 4 variants
        assert_eq!(outcome.table.len(), 4);
        assert!(outcome.rows.iter().all(|r| r.rmse.is_finite() && r.test_loglik.is_finite()));
        assert!(outcome.table.iter().all(|t| t.n_seeds == 2));
        assert!(data_dir.join("yacht.csv").exists());
        assert!(dir.path().join("out/seed-0/yacht-deep-adaptive.jsonl").exists());

        let results_bytes = std::fs::read(dir.path().join("out/results.csv")).unwrap();
        let again = cmd_uci(&cfg).unwrap();
        assert_eq!(outcome.rows.len(), again.rows.len());
        assert_eq!(results_bytes, std::fs::read(dir.path().join("out/results.csv")).unwrap());
    }

    #[test]
    fn uci_missing_dataset_without_synthesis_fails() {
        let dir = tempfile::tempdir().unwrap();
        let text = fixtures::UCI
            .replace("out_dir = \"runs/uci\"", &format!("out_dir = {:?}", dir.path().join("out").display().to_string()))
            .replace("dir = \"data/uci\"", &format!("dir = {:?}", dir.path().join("nowhere").display().to_string()))
            .replace("synthesize_missing = true", "synthesize_missing = false");
        let cfg = match ExperimentConfig::parse(&text).unwrap() {
            ExperimentConfig::Uci(c) => c,
            _ => unreachable!(),
        };
        match cmd_uci(&cfg) {
            Err(Error::InvalidParam(msg)) => assert!(msg.contains("missing")),
            other => panic!("expected missing-dataset error, got {other:?}"),
        }
    }

    #[test]
    fn bandit_suite_covers_agents_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let text = fixtures::BANDIT
            .replace("out_dir = \"runs/bandit\"", &format!("out_dir = {:?}", dir.path().join("out").display().to_string()))
            .replace(
                "mushroom_csv = \"data/mushrooms.csv\"",
                &format!("mushroom_csv = {:?}", dir.path().join("m.csv").display().to_string()),
            )
            .replace("seeds = [1, 2, 3]", "seeds = [5]")
            .replace("interactions = 5000", "interactions = 10")
            .replace("synth_rows = 8124", "synth_rows = 400")
            .replace("hidden = [100, 100]", "hidden = [6, 6]")
            .replace("mu = 50.0", "mu = 3.0")
            .replace("sigma = 20.0", "sigma = 2.0")
            .replace("buffer_capacity = 4096", "buffer_capacity = 64")
            .replace("rmse_window = 512", "rmse_window = 64");
        let cfg = match ExperimentConfig::parse(&text).unwrap() {
            ExperimentConfig::Bandit(c) => c,
            _ => unreachable!(),
        };
        let outcome = cmd_bandit(&cfg, false).unwrap();
        assert_eq!(outcome.summary.len(), 5);
        assert_eq!(outcome.curves.len(), 5);
        let warm = outcome.summary.iter().find(|r| r.agent == "thompson-warmstart").unwrap();
        assert!(!warm.hidden.is_empty());
        let adaptive = outcome.summary.iter().find(|r| r.agent == "thompson-adaptive").unwrap();
        assert_eq!(warm.hidden, adaptive.hidden);
        for agent in KNOWN_AGENTS {
            let rows = read_csv_rows(&dir.path().join(format!("out/seed-5/{agent}.csv")));
            assert_eq!(rows.len(), 10, "{agent}");
        }

        let summary_bytes = std::fs::read(dir.path().join("out/summary.csv")).unwrap();
        let greedy_bytes = std::fs::read(dir.path().join("out/seed-5/greedy.csv")).unwrap();
        cmd_bandit(&cfg, false).unwrap();
        assert_eq!(summary_bytes, std::fs::read(dir.path().join("out/summary.csv")).unwrap());
        assert_eq!(greedy_bytes, std::fs::read(dir.path().join("out/seed-5/greedy.csv")).unwrap());
    }
}
