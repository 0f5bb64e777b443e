//! Variational training loop: single-sample ELBO steps, Adam, per-epoch run
//! logs, and optional early stopping on held-out NLL. The per-batch objective
//! up-scales the batch NLL by dataset_size/batch_size and counts the KL terms
//! once, so summing batch losses over an epoch estimates the full negative
//! ELBO once per pass.

use std::io::{BufRead, Write as IoWrite};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Likelihood, Network, StepNoise};
use crate::math;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Optimizer and loop settings for one fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Relaxation temperature for size adapters.
    pub tau_size: f64,
    /// Relaxation temperature for skip adapters.
    pub tau_depth: f64,
    /// Weight on the KL terms of the per-batch loss.
    pub kl_scale: f64,
    /// Stop after this many epochs without improving held-out NLL.
    pub early_stop_patience: Option<usize>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed,
            tau_size: 1.0,
            tau_depth: 1.0,
            kl_scale: 1.0,
            early_stop_patience: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.batch_size < 1 {
            issues.push("batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0) {
            issues.push("learning_rate must be > 0".to_string());
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                issues.push(format!("{name} must be in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            issues.push("adam_eps must be > 0".to_string());
        }
        if !(self.tau_size > 0.0) || !(self.tau_depth > 0.0) {
            issues.push("temperatures must be > 0".to_string());
        }
        if !(self.kl_scale > 0.0 && self.kl_scale <= 1.0) {
            issues.push("kl_scale must be in (0, 1]".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { issues })
        }
    }
}

// ---------------------------------------------------------------------------
// ELBO step
// ---------------------------------------------------------------------------

/// The three summands of one batch's negative-ELBO estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ElboTerms {
    /// Batch negative log-likelihood scaled by dataset_size/batch_size.
    pub nll: f64,
    pub kl_weights: f64,
    pub kl_arch: f64,
    pub kl_scale: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.nll + self.kl_scale * (self.kl_weights + self.kl_arch)
    }
}

/// One loss evaluation plus gradients, at explicitly provided noise. Errors
/// name the term that went non-finite rather than poisoning the parameters.
pub fn elbo_step_with_noise(
    net: &Network,
    x: &Tensor,
    y: &Tensor,
    n_total: usize,
    kl_scale: f64,
    noise: &StepNoise,
) -> Result<(ElboTerms, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let leaves = net.make_leaves(&mut tape);
    let loss = net.build_loss(&mut tape, &leaves, x, y, n_total, kl_scale, noise)?;
    let terms = ElboTerms {
        nll: tape.value(loss.nll_scaled).item(),
        kl_weights: tape.value(loss.kl_weights).item(),
        kl_arch: tape.value(loss.kl_arch).item(),
        kl_scale,
    };
    for (name, value) in [
        ("nll", terms.nll),
        ("kl_weights", terms.kl_weights),
        ("kl_arch", terms.kl_arch),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name} = {value}")));
        }
    }
    let grads = tape.backward(loss.total)?;
    let out: Vec<Tensor> = leaves
        .iter()
        .enumerate()
        .map(|(i, &leaf)| {
            grads
                .wrt(leaf)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(leaves[i]).rows(), tape.value(leaves[i]).cols()))
        })
        .collect();
    if let Some(i) = out.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of parameter {i} after a finite loss"
        )));
    }
    Ok((terms, out))
}

/// One training step's loss and gradients under fresh reparameterization
/// noise; the architecture sample is shared by the likelihood and KL paths.
pub fn elbo_step(
    net: &Network,
    x: &Tensor,
    y: &Tensor,
    n_total: usize,
    kl_scale: f64,
    rng: &mut impl Rng,
) -> Result<(ElboTerms, Vec<Tensor>)> {
    let noise = net.sample_noise(rng);
    elbo_step_with_noise(net, x, y, n_total, kl_scale, &noise)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam with per-tensor first/second moment state, aligned by parameter
/// index. State persists across calls, so fine-tuning loops can keep one
/// optimizer alive over many fits.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Adam {
        Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidParam(format!(
                "adam got {} params and {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::InvalidParam("adam state does not match parameter count".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = self.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                p.data_mut()[i] -= update;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Run logs
// ---------------------------------------------------------------------------

/// Header record written as the first line of a run log file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunMeta {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub likelihood: String,
    pub kl_scale: f64,
    pub tau_size: f64,
    pub tau_depth: f64,
}

/// Size posterior state of one adapter at one epoch.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SizePosteriorRow {
    pub layer: usize,
    pub mu: f64,
    pub sigma: f64,
    pub pi: Vec<f64>,
}

/// Skip posterior state of one adapter at one epoch.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SkipRow {
    pub layer: usize,
    pub pi: f64,
}

/// One epoch of training, as serialized to the line-delimited log.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub run_id: String,
    pub epoch: usize,
    /// Mean over batches of the scaled batch NLL.
    pub nll: f64,
    pub kl_weights: f64,
    pub kl_arch: f64,
    pub size_posteriors: Vec<SizePosteriorRow>,
    pub skip_probs: Vec<SkipRow>,
    /// RMSE for Gaussian likelihoods, accuracy for categorical ones, at the
    /// mean-field forward pass over the training set.
    pub train_metric: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_nll: Option<f64>,
}

/// Training history: one meta line followed by one line per epoch.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, &self.meta)?;
        file.write_all(b"\n")?;
        for record in &self.epochs {
            serde_json::to_writer(&mut file, record)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<RunLog> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| Error::InvalidParam(format!("{} is empty", path.display())))??;
        let meta: RunMeta = serde_json::from_str(&meta_line)?;
        let mut epochs = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            epochs.push(serde_json::from_str(&line)?);
        }
        Ok(RunLog { meta, epochs })
    }

    /// Stamp identifiers onto the log and all its rows.
    pub fn with_identity(mut self, run_id: &str, config_hash: &str) -> RunLog {
        self.meta.run_id = run_id.to_string();
        self.meta.config_hash = config_hash.to_string();
        for record in &mut self.epochs {
            record.run_id = run_id.to_string();
        }
        self
    }
}

// ---------------------------------------------------------------------------
// Fit loop
// ---------------------------------------------------------------------------

/// Training inputs: features/targets plus an optional held-out split that
/// feeds early stopping and the per-epoch validation NLL.
pub struct FitData<'a> {
    pub x: &'a Tensor,
    pub y: &'a Tensor,
    pub x_val: Option<&'a Tensor>,
    pub y_val: Option<&'a Tensor>,
}

impl<'a> FitData<'a> {
    pub fn train_only(x: &'a Tensor, y: &'a Tensor) -> FitData<'a> {
        FitData {
            x,
            y,
            x_val: None,
            y_val: None,
        }
    }
}

/// Sum of Gaussian log-densities of targets around predictions.
pub fn gaussian_loglik(pred_mean: &Tensor, target: &Tensor, obs_sigma: f64) -> Result<f64> {
    if pred_mean.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "gaussian_loglik",
            lhs: pred_mean.shape(),
            rhs: target.shape(),
        });
    }
    if !(obs_sigma > 0.0) {
        return Err(Error::InvalidParam(format!("obs_sigma must be > 0, got {obs_sigma}")));
    }
    Ok(pred_mean
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| math::gaussian_logpdf(t, p, obs_sigma))
        .sum())
}

/// Per-point NLL of the mean-field forward pass; the early-stopping signal.
pub fn mean_field_nll(net: &Network, x: &Tensor, y: &Tensor) -> Result<f64> {
    let pred = net.forward_mean_field(x)?;
    match net.likelihood {
        Likelihood::Gaussian { obs_sigma } => {
            Ok(-gaussian_loglik(&pred, y, obs_sigma)? / x.rows() as f64)
        }
        Likelihood::Categorical => {
            let mut acc = 0.0;
            for r in 0..y.rows() {
                let mut point = 0.0;
                for c in 0..y.cols() {
                    if y.get(r, c) > 0.0 {
                        point += y.get(r, c) * pred.get(r, c).max(1e-300).ln();
                    }
                }
                acc -= point;
            }
            Ok(acc / x.rows() as f64)
        }
    }
}

fn train_metric(net: &Network, x: &Tensor, y: &Tensor) -> Result<f64> {
    let pred = net.forward_mean_field(x)?;
    match net.likelihood {
        Likelihood::Gaussian { .. } => {
            let mut sse = 0.0;
            for (p, t) in pred.data().iter().zip(y.data()) {
                sse += (p - t) * (p - t);
            }
            Ok((sse / y.len() as f64).sqrt())
        }
        Likelihood::Categorical => {
            let mut hits = 0usize;
            for r in 0..y.rows() {
                let pick = |t: &Tensor| {
                    (0..t.cols())
                        .max_by(|&a, &b| t.get(r, a).partial_cmp(&t.get(r, b)).unwrap())
                        .unwrap()
                };
                if pick(&pred) == pick(y) {
                    hits += 1;
                }
            }
            Ok(hits as f64 / y.rows() as f64)
        }
    }
}

fn snapshot_posteriors(net: &Network) -> (Vec<SizePosteriorRow>, Vec<SkipRow>) {
    let mut sizes = Vec::new();
    let mut skips = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        if let Some(size) = &layer.size {
            sizes.push(SizePosteriorRow {
                layer: i,
                mu: size.post.mu,
                sigma: size.post.sigma(),
                pi: crate::distributions::size_probs(&size.post).data().to_vec(),
            });
        }
        if let Some(skip) = &layer.skip {
            skips.push(SkipRow {
                layer: i,
                pi: math::sigmoid(skip.logit),
            });
        }
    }
    (sizes, skips)
}

fn likelihood_name(net: &Network) -> String {
    match net.likelihood {
        Likelihood::Gaussian { obs_sigma } => format!("gaussian(obs_sigma={obs_sigma})"),
        Likelihood::Categorical => "categorical".to_string(),
    }
}

/// Train in place, invoking `hook` after every epoch (experiments use it to
/// capture prediction snapshots mid-run).
pub fn fit_with<F>(net: &mut Network, data: &FitData, cfg: &TrainConfig, mut hook: F) -> Result<RunLog>
where
    F: FnMut(&Network, &EpochRecord),
{
    cfg.validate()?;
    net.validate()?;
    if data.x.rows() != data.y.rows() {
        return Err(Error::ShapeMismatch {
            op: "fit_data",
            lhs: data.x.shape(),
            rhs: data.y.shape(),
        });
    }
    if cfg.early_stop_patience.is_some() && (data.x_val.is_none() || data.y_val.is_none()) {
        return Err(Error::InvalidParam(
            "early stopping needs a validation split".into(),
        ));
    }
    net.set_temperatures(cfg.tau_size, cfg.tau_depth)?;

    let n = data.x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::from_config(cfg);
    let mut params = net.param_values();
    let mut log = RunLog {
        meta: RunMeta {
            run_id: format!("fit-seed{}", cfg.seed),
            config_hash: String::new(),
            seed: cfg.seed,
            version: crate::VERSION.to_string(),
            likelihood: likelihood_name(net),
            kl_scale: cfg.kl_scale,
            tau_size: cfg.tau_size,
            tau_depth: cfg.tau_depth,
        },
        epochs: Vec::new(),
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<Tensor>, usize)> = None; // (val nll, params, epochs since)

    for epoch in 0..cfg.epochs {
        // Fisher-Yates on the fit rng keeps the whole run a pure function of the seed
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = data.x.select_rows(chunk);
            let yb = data.y.select_rows(chunk);
            let (terms, grads) = elbo_step(net, &xb, &yb, n, cfg.kl_scale, &mut rng)
                .map_err(|source| Error::TrainingAborted {
                    epoch,
                    step,
                    source: Box::new(source),
                })?;
            adam.step(&mut params, &grads)?;
            net.set_params(&params).map_err(|source| Error::TrainingAborted {
                epoch,
                step,
                source: Box::new(source),
            })?;
            sums.0 += terms.nll;
            sums.1 += terms.kl_weights;
            sums.2 += terms.kl_arch;
            batches += 1;
        }
        let (size_posteriors, skip_probs) = snapshot_posteriors(net);
        let val_nll = match (data.x_val, data.y_val) {
            (Some(xv), Some(yv)) => Some(mean_field_nll(net, xv, yv)?),
            _ => None,
        };
        let record = EpochRecord {
            run_id: log.meta.run_id.clone(),
            epoch,
            nll: sums.0 / batches as f64,
            kl_weights: sums.1 / batches as f64,
            kl_arch: sums.2 / batches as f64,
            size_posteriors,
            skip_probs,
            train_metric: train_metric(net, data.x, data.y)?,
            val_nll,
        };
        hook(net, &record);
        log.epochs.push(record);

        if let (Some(patience), Some(val)) = (cfg.early_stop_patience, val_nll) {
            match &mut best {
                Some((best_val, best_params, stale)) => {
                    if val < *best_val {
                        *best_val = val;
                        *best_params = params.clone();
                        *stale = 0;
                    } else {
                        *stale += 1;
                        if *stale >= patience {
                            net.set_params(best_params)?;
                            return Ok(log);
                        }
                    }
                }
                None => best = Some((val, params.clone(), 0)),
            }
        }
    }
    if let Some((_, best_params, _)) = best {
        net.set_params(&best_params)?;
    }
    Ok(log)
}

/// Train in place and return the per-epoch history.
pub fn fit(net: &mut Network, data: &FitData, cfg: &TrainConfig) -> Result<RunLog> {
    fit_with(net, data, cfg, |_, _| {})
}
