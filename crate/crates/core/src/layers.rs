//! Network structure: dense layers whose width and presence are random
//! variables. Each hidden layer can carry a size adapter (relaxed categorical
//! over active-unit counts, reparameterized through a truncated-normal grid)
//! and a skip adapter (relaxed Bernoulli gate that can replace the layer with
//! the identity). `build_loss` assembles the full negative-ELBO graph on a
//! tape; the plain `forward_*` methods serve prediction and decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    self, ConcreteCategoricalParams, GaussianPosterior, GaussianPrior, TruncNormSizeParams,
};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{gumbel_row, logistic, normal_tensor, uniform_sym};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Activation> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::InvalidParam(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    Point,
    Gaussian,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight_mode: WeightMode,
}

/// Posterior and prior over the number of active output units.
#[derive(Clone, Debug)]
pub struct SizeAdapter {
    pub post: TruncNormSizeParams,
    pub prior: TruncNormSizeParams,
    pub temperature: f64,
}

/// Posterior logit and prior probability of skipping the whole layer.
#[derive(Clone, Debug)]
pub struct SkipAdapter {
    pub logit: f64,
    pub prior_prob: f64,
    pub temperature: f64,
}

#[derive(Clone, Debug)]
pub enum LayerWeights {
    Point { w: Tensor, b: Tensor },
    Gaussian { w: GaussianPosterior, b: GaussianPosterior },
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub spec: DenseSpec,
    pub weights: LayerWeights,
    pub size: Option<SizeAdapter>,
    pub skip: Option<SkipAdapter>,
}

#[derive(Clone, Copy, Debug)]
pub enum Likelihood {
    Gaussian { obs_sigma: f64 },
    Categorical,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub likelihood: Likelihood,
    pub weight_prior: GaussianPrior,
}

/// Size-adapter settings shared by the hidden layers of an MLP.
#[derive(Clone, Copy, Debug)]
pub struct SizePlan {
    pub prior_mu: f64,
    pub prior_sigma: f64,
    pub temperature: f64,
}

/// Skip-adapter settings shared by the square hidden layers of an MLP.
#[derive(Clone, Copy, Debug)]
pub struct SkipPlan {
    pub prior_prob: f64,
    pub temperature: f64,
}

/// How weight posteriors start out.
#[derive(Clone, Copy, Debug)]
pub enum WeightInit {
    /// Fan-in scaled uniform means; posterior std starts at `sigma`.
    FanIn { sigma: f64 },
    /// Posterior equals the prior exactly (zero means, std = prior sigma),
    /// so the weight KL starts at zero. Gaussian mode only.
    FromPrior,
}

#[derive(Clone, Debug)]
pub struct MlpConfig {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub hidden_activation: Activation,
    pub weight_mode: WeightMode,
    pub likelihood: Likelihood,
    pub prior_sigma: f64,
    pub weight_init: WeightInit,
    pub size_plan: Option<SizePlan>,
    pub skip_plan: Option<SkipPlan>,
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// One step's worth of reparameterization noise for a single layer.
#[derive(Clone, Debug)]
pub struct LayerNoise {
    pub w_eps: Option<Tensor>,
    pub b_eps: Option<Tensor>,
    pub gumbels: Option<Tensor>,
    pub skip_eps: Option<f64>,
}

/// Fresh noise for every stochastic element of the network, drawn in a fixed
/// order (per layer: weight eps, bias eps, size gumbels, skip logistic).
#[derive(Clone, Debug)]
pub struct StepNoise {
    pub layers: Vec<LayerNoise>,
}

// ---------------------------------------------------------------------------
// Standalone forward pieces
// ---------------------------------------------------------------------------

/// Mask over output units from a simplex sample: m_i = sum_{j >= i} s_j, so a
/// sample concentrated on cell k activates exactly the first k units.
pub fn build_size_mask(s: &Tensor) -> Result<Tensor> {
    if s.rows() != 1 {
        return Err(Error::InvalidShape(format!(
            "size sample must be a row vector, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let mut m = vec![0.0; s.cols()];
    let mut acc = 0.0;
    for i in (0..s.cols()).rev() {
        acc += s.data()[i];
        m[i] = acc;
    }
    Tensor::new(1, s.cols(), m)
}

/// Mask that activates exactly the first k of `width` units.
pub fn hard_size_mask(k: usize, width: usize) -> Tensor {
    let mut m = vec![0.0; width];
    for v in m.iter_mut().take(k) {
        *v = 1.0;
    }
    Tensor::new(1, width, m).expect("hard mask shape")
}

/// act(x W + b) with each output column scaled by the mask.
pub fn sized_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    activation: Activation,
    mask: &Tensor,
) -> Result<Tensor> {
    let z = add_bias(x.matmul(w)?, b)?;
    let a = apply_activation_plain(&z, activation);
    mul_columns(&a, mask)
}

/// Gate between a layer's output and its input: (1 - gamma) inner + gamma x.
pub fn skip_forward(inner: &Tensor, x: &Tensor, gamma: f64) -> Result<Tensor> {
    if inner.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "skip_forward",
            lhs: inner.shape(),
            rhs: x.shape(),
        });
    }
    inner.scale(1.0 - gamma).add(&x.scale(gamma))
}

fn add_bias(mut z: Tensor, b: &Tensor) -> Result<Tensor> {
    if b.rows() != 1 || b.cols() != z.cols() {
        return Err(Error::ShapeMismatch {
            op: "add_bias",
            lhs: z.shape(),
            rhs: b.shape(),
        });
    }
    let cols = z.cols();
    for r in 0..z.rows() {
        for c in 0..cols {
            let v = z.get(r, c) + b.data()[c];
            z.set(r, c, v);
        }
    }
    Ok(z)
}

fn mul_columns(a: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if mask.rows() != 1 || mask.cols() != a.cols() {
        return Err(Error::ShapeMismatch {
            op: "mul_columns",
            lhs: a.shape(),
            rhs: mask.shape(),
        });
    }
    let mut out = a.clone();
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            out.set(r, c, a.get(r, c) * mask.data()[c]);
        }
    }
    Ok(out)
}

fn apply_activation_plain(z: &Tensor, activation: Activation) -> Tensor {
    match activation {
        Activation::Relu => z.map(|v| v.max(0.0)),
        Activation::Identity => z.clone(),
        Activation::Softmax => softmax_rows(z),
    }
}

fn softmax_rows(z: &Tensor) -> Tensor {
    let mut out = z.clone();
    for r in 0..z.rows() {
        let row: Vec<f64> = (0..z.cols()).map(|c| z.get(r, c)).collect();
        let lse = math::logsumexp(&row);
        for c in 0..z.cols() {
            out.set(r, c, (z.get(r, c) - lse).exp());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

impl Network {
    /// Fully connected network. Hidden layers get a size adapter when a size
    /// plan is given (grid K = layer width) and a skip adapter when a skip
    /// plan is given and the layer is square. The final layer is always plain.
    pub fn mlp(cfg: &MlpConfig, rng: &mut impl Rng) -> Result<Network> {
        if cfg.in_dim == 0 || cfg.out_dim == 0 {
            return Err(Error::InvalidParam("in_dim and out_dim must be >= 1".into()));
        }
        if cfg.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParam("hidden widths must be >= 1".into()));
        }
        let weight_prior = GaussianPrior::new(cfg.prior_sigma)?;
        let final_activation = match cfg.likelihood {
            Likelihood::Gaussian { obs_sigma } => {
                if !(obs_sigma > 0.0) {
                    return Err(Error::InvalidParam(format!(
                        "obs_sigma must be > 0, got {obs_sigma}"
                    )));
                }
                Activation::Identity
            }
            Likelihood::Categorical => Activation::Softmax,
        };

        let mut dims = vec![cfg.in_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(cfg.out_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            let is_final = i == dims.len() - 2;
            let activation = if is_final { final_activation } else { cfg.hidden_activation };
            let spec = DenseSpec {
                in_dim,
                out_dim,
                activation,
                weight_mode: cfg.weight_mode,
            };
            let weights = init_weights(&spec, cfg.weight_init, cfg.prior_sigma, rng)?;
            let size = if !is_final {
                match cfg.size_plan {
                    Some(plan) => {
                        let prior =
                            TruncNormSizeParams::from_moments(plan.prior_mu, plan.prior_sigma, out_dim)?;
                        Some(SizeAdapter {
                            post: prior,
                            prior,
                            temperature: plan.temperature,
                        })
                    }
                    None => None,
                }
            } else {
                None
            };
            let skip = if !is_final && in_dim == out_dim {
                match cfg.skip_plan {
                    Some(plan) => {
                        if !(plan.prior_prob > 0.0 && plan.prior_prob < 1.0) {
                            return Err(Error::InvalidParam(format!(
                                "skip prior prob must be in (0,1), got {}",
                                plan.prior_prob
                            )));
                        }
                        Some(SkipAdapter {
                            logit: math::logit(plan.prior_prob),
                            prior_prob: plan.prior_prob,
                            temperature: plan.temperature,
                        })
                    }
                    None => None,
                }
            } else {
                None
            };
            layers.push(Layer {
                spec,
                weights,
                size,
                skip,
            });
        }

        let net = Network {
            layers,
            likelihood: cfg.likelihood,
            weight_prior,
        };
        net.validate()?;
        Ok(net)
    }

    /// Structural invariants assumed by the loss builder and by pruning.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParam("network needs at least one layer".into()));
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let spec = &layer.spec;
            if i + 1 < self.layers.len() && spec.out_dim != self.layers[i + 1].spec.in_dim {
                return Err(Error::InvalidParam(format!(
                    "layer {i} out_dim {} does not match layer {} in_dim {}",
                    spec.out_dim,
                    i + 1,
                    self.layers[i + 1].spec.in_dim
                )));
            }
            if spec.activation == Activation::Softmax && i != last {
                return Err(Error::InvalidParam("softmax is only valid on the final layer".into()));
            }
            if let Some(size) = &layer.size {
                if i == last {
                    return Err(Error::InvalidParam("final layer cannot carry a size adapter".into()));
                }
                if size.post.k != spec.out_dim || size.prior.k != spec.out_dim {
                    return Err(Error::InvalidParam(format!(
                        "layer {i} size grid K must equal out_dim {}",
                        spec.out_dim
                    )));
                }
            }
            if let Some(skip) = &layer.skip {
                if i == last {
                    return Err(Error::InvalidParam("final layer cannot carry a skip adapter".into()));
                }
                if spec.in_dim != spec.out_dim {
                    return Err(Error::InvalidParam(format!(
                        "layer {i} skip gate needs in_dim == out_dim, got {} and {}",
                        spec.in_dim, spec.out_dim
                    )));
                }
                if !(skip.prior_prob > 0.0 && skip.prior_prob < 1.0) {
                    return Err(Error::InvalidParam("skip prior prob must be in (0,1)".into()));
                }
            }
        }
        match self.likelihood {
            Likelihood::Categorical => {
                if self.layers[last].spec.activation != Activation::Softmax {
                    return Err(Error::InvalidParam(
                        "categorical likelihood needs a softmax final layer".into(),
                    ));
                }
            }
            Likelihood::Gaussian { obs_sigma } => {
                if !(obs_sigma > 0.0) {
                    return Err(Error::InvalidParam("obs_sigma must be > 0".into()));
                }
                if self.layers[last].spec.activation == Activation::Softmax {
                    return Err(Error::InvalidParam(
                        "gaussian likelihood cannot use a softmax final layer".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }
}

fn init_weights(
    spec: &DenseSpec,
    init: WeightInit,
    prior_sigma: f64,
    rng: &mut impl Rng,
) -> Result<LayerWeights> {
    let uniform_means = |rng: &mut dyn FnMut() -> f64| {
        let mut w = Tensor::zeros(spec.in_dim, spec.out_dim);
        for v in w.data_mut() {
            *v = rng();
        }
        w
    };
    match (spec.weight_mode, init) {
        (WeightMode::Point, WeightInit::FanIn { .. }) => {
            // fan-in scaled uniform keeps pre-activations O(1) at any width;
            // biases share the weight bound (an always-on extra input), which
            // spreads the ReLU kinks across the input range
            let bound = (6.0 / spec.in_dim as f64).sqrt();
            let w = uniform_means(&mut || uniform_sym(bound, rng));
            let mut b = Tensor::zeros(1, spec.out_dim);
            for v in b.data_mut() {
                *v = uniform_sym(bound, rng);
            }
            Ok(LayerWeights::Point { w, b })
        }
        (WeightMode::Point, WeightInit::FromPrior) => Err(Error::InvalidParam(
            "point weights cannot be initialised from the prior".into(),
        )),
        (WeightMode::Gaussian, WeightInit::FanIn { sigma }) => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidParam(format!("init sigma must be > 0, got {sigma}")));
            }
            let bound = (6.0 / spec.in_dim as f64).sqrt();
            let w = uniform_means(&mut || uniform_sym(bound, rng));
            let mut b = Tensor::zeros(1, spec.out_dim);
            for v in b.data_mut() {
                *v = uniform_sym(bound, rng);
            }
            let rho = math::inv_softplus(sigma);
            Ok(LayerWeights::Gaussian {
                w: GaussianPosterior::new(w, Tensor::full(spec.in_dim, spec.out_dim, rho))?,
                b: GaussianPosterior::new(b, Tensor::full(1, spec.out_dim, rho))?,
            })
        }
        (WeightMode::Gaussian, WeightInit::FromPrior) => {
            let rho = math::inv_softplus(prior_sigma);
            Ok(LayerWeights::Gaussian {
                w: GaussianPosterior::new(
                    Tensor::zeros(spec.in_dim, spec.out_dim),
                    Tensor::full(spec.in_dim, spec.out_dim, rho),
                )?,
                b: GaussianPosterior::new(Tensor::zeros(1, spec.out_dim), Tensor::full(1, spec.out_dim, rho))?,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter access
// ---------------------------------------------------------------------------

impl Network {
    /// Trainable tensors in a fixed visitation order. Scalars travel as 1x1
    /// tensors so one optimizer handles everything.
    pub fn param_values(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match &layer.weights {
                LayerWeights::Point { w, b } => {
                    out.push(w.clone());
                    out.push(b.clone());
                }
                LayerWeights::Gaussian { w, b } => {
                    out.push(w.mean.clone());
                    out.push(w.rho.clone());
                    out.push(b.mean.clone());
                    out.push(b.rho.clone());
                }
            }
            if let Some(size) = &layer.size {
                out.push(Tensor::scalar(size.post.mu));
                out.push(Tensor::scalar(size.post.sigma_raw));
            }
            if let Some(skip) = &layer.skip {
                out.push(Tensor::scalar(skip.logit));
            }
        }
        out
    }

    /// Names aligned with `param_values`, for logs and diagnostics.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match &layer.weights {
                LayerWeights::Point { .. } => {
                    out.push(format!("layer{i}.w"));
                    out.push(format!("layer{i}.b"));
                }
                LayerWeights::Gaussian { .. } => {
                    out.push(format!("layer{i}.w_mean"));
                    out.push(format!("layer{i}.w_rho"));
                    out.push(format!("layer{i}.b_mean"));
                    out.push(format!("layer{i}.b_rho"));
                }
            }
            if layer.size.is_some() {
                out.push(format!("layer{i}.size_mu"));
                out.push(format!("layer{i}.size_sigma_raw"));
            }
            if layer.skip.is_some() {
                out.push(format!("layer{i}.skip_logit"));
            }
        }
        out
    }

    /// Write back tensors produced by `param_values` after an optimizer step.
    pub fn set_params(&mut self, values: &[Tensor]) -> Result<()> {
        let expected = self.param_values().len();
        if values.len() != expected {
            return Err(Error::InvalidParam(format!(
                "expected {expected} parameter tensors, got {}",
                values.len()
            )));
        }
        let mut it = values.iter();
        let mut take = |shape: (usize, usize), what: &str| -> Result<Tensor> {
            let t = it.next().expect("length checked above");
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "set_params",
                    lhs: shape,
                    rhs: t.shape(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {what}")));
            }
            Ok(t.clone())
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match &mut layer.weights {
                LayerWeights::Point { w, b } => {
                    *w = take(w.shape(), &format!("layer{i}.w"))?;
                    *b = take(b.shape(), &format!("layer{i}.b"))?;
                }
                LayerWeights::Gaussian { w, b } => {
                    w.mean = take(w.mean.shape(), &format!("layer{i}.w_mean"))?;
                    w.rho = take(w.rho.shape(), &format!("layer{i}.w_rho"))?;
                    b.mean = take(b.mean.shape(), &format!("layer{i}.b_mean"))?;
                    b.rho = take(b.rho.shape(), &format!("layer{i}.b_rho"))?;
                }
            }
            if let Some(size) = &mut layer.size {
                size.post.mu = take((1, 1), &format!("layer{i}.size_mu"))?.item();
                size.post.sigma_raw = take((1, 1), &format!("layer{i}.size_sigma_raw"))?.item();
            }
            if let Some(skip) = &mut layer.skip {
                skip.logit = take((1, 1), &format!("layer{i}.skip_logit"))?.item();
            }
        }
        Ok(())
    }

    /// One tape leaf per parameter tensor, in `param_values` order.
    pub fn make_leaves(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.param_values().into_iter().map(|t| tape.leaf(t)).collect()
    }

    /// Draw fresh reparameterization noise for one training or prediction
    /// step. The draw order is fixed, so equal seeds give equal runs.
    pub fn sample_noise(&self, rng: &mut impl Rng) -> StepNoise {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let (w_eps, b_eps) = match &layer.weights {
                    LayerWeights::Point { .. } => (None, None),
                    LayerWeights::Gaussian { w, b } => (
                        Some(normal_tensor(w.mean.rows(), w.mean.cols(), rng)),
                        Some(normal_tensor(b.mean.rows(), b.mean.cols(), rng)),
                    ),
                };
                let gumbels = layer
                    .size
                    .as_ref()
                    .map(|size| gumbel_row(size.post.k, rng));
                let skip_eps = layer.skip.as_ref().map(|_| logistic(rng));
                LayerNoise {
                    w_eps,
                    b_eps,
                    gumbels,
                    skip_eps,
                }
            })
            .collect();
        StepNoise { layers }
    }
}

// ---------------------------------------------------------------------------
// Loss graph
// ---------------------------------------------------------------------------

/// Handles into the loss graph built by `build_loss`.
pub struct LossNodes {
    /// nll_scaled + kl_scale (kl_weights + kl_arch); the training objective.
    pub total: NodeId,
    /// (n_total / batch) times the batch negative log-likelihood.
    pub nll_scaled: NodeId,
    /// Closed-form KL of all Gaussian weight posteriors.
    pub kl_weights: NodeId,
    /// Single-sample KL estimate of all architecture adapters.
    pub kl_arch: NodeId,
    /// Network predictions for the batch (means or class probabilities).
    pub pred: NodeId,
}

impl Network {
    /// Assemble the negative-ELBO for one batch as a differentiable graph.
    /// `leaves` must come from `make_leaves` (or equal tensors in the same
    /// order); `noise` must come from `sample_noise` on the same network.
    pub fn build_loss(
        &self,
        tape: &mut Tape,
        leaves: &[NodeId],
        x: &Tensor,
        y: &Tensor,
        n_total: usize,
        kl_scale: f64,
        noise: &StepNoise,
    ) -> Result<LossNodes> {
        let expected = self.param_values().len();
        if leaves.len() != expected {
            return Err(Error::InvalidParam(format!(
                "expected {expected} parameter leaves, got {}",
                leaves.len()
            )));
        }
        if noise.layers.len() != self.layers.len() {
            return Err(Error::InvalidParam("noise does not match network depth".into()));
        }
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "build_loss_input",
                lhs: (x.rows(), self.in_dim()),
                rhs: x.shape(),
            });
        }
        if y.shape() != (x.rows(), self.out_dim()) {
            return Err(Error::ShapeMismatch {
                op: "build_loss_target",
                lhs: (x.rows(), self.out_dim()),
                rhs: y.shape(),
            });
        }
        if n_total < x.rows() {
            return Err(Error::InvalidParam(format!(
                "n_total {n_total} smaller than batch {}",
                x.rows()
            )));
        }
        let batch = x.rows();
        let last = self.layers.len() - 1;

        let mut next = 0usize;
        let mut next_leaf = || {
            let id = leaves[next];
            next += 1;
            id
        };

        let mut h = tape.leaf(x.clone());
        let mut kl_weights: Option<NodeId> = None;
        let mut kl_arch: Option<NodeId> = None;
        let mut final_z = h; // overwritten on the last layer

        for (i, layer) in self.layers.iter().enumerate() {
            let layer_noise = &noise.layers[i];
            // weights
            let (w_node, b_node) = match &layer.weights {
                LayerWeights::Point { .. } => (next_leaf(), next_leaf()),
                LayerWeights::Gaussian { .. } => {
                    let w_mean = next_leaf();
                    let w_rho = next_leaf();
                    let b_mean = next_leaf();
                    let b_rho = next_leaf();
                    let w_eps = layer_noise
                        .w_eps
                        .clone()
                        .ok_or_else(|| Error::InvalidParam(format!("layer {i} missing weight noise")))?;
                    let b_eps = layer_noise
                        .b_eps
                        .clone()
                        .ok_or_else(|| Error::InvalidParam(format!("layer {i} missing bias noise")))?;
                    let w_eps = tape.leaf(w_eps);
                    let b_eps = tape.leaf(b_eps);
                    let w = distributions::tape_sample_gaussian(tape, w_mean, w_rho, w_eps)?;
                    let b = distributions::tape_sample_gaussian(tape, b_mean, b_rho, b_eps)?;
                    let kw = distributions::tape_kl_gaussian(tape, w_mean, w_rho, self.weight_prior.sigma0)?;
                    let kb = distributions::tape_kl_gaussian(tape, b_mean, b_rho, self.weight_prior.sigma0)?;
                    let ksum = tape.add(kw, kb)?;
                    kl_weights = Some(match kl_weights {
                        Some(acc) => tape.add(acc, ksum)?,
                        None => ksum,
                    });
                    (w, b)
                }
            };

            let z = tape.matmul(h, w_node)?;
            let z = tape.add_row(z, b_node)?;
            if i == last {
                final_z = z;
            }

            let mut a = match layer.spec.activation {
                Activation::Relu => tape.relu(z),
                Activation::Identity => z,
                // final-layer softmax is fused into the likelihood below
                Activation::Softmax => z,
            };

            // size mask
            if let Some(size) = &layer.size {
                let mu = next_leaf();
                let sigma_raw = next_leaf();
                let gumbels = layer_noise
                    .gumbels
                    .clone()
                    .ok_or_else(|| Error::InvalidParam(format!("layer {i} missing size gumbels")))?;
                let gumbels = tape.leaf(gumbels);
                let log_pi = distributions::tape_size_log_probs(tape, mu, sigma_raw, size.post.k)?;
                let sample =
                    distributions::tape_sample_concrete_categorical(tape, log_pi, gumbels, size.temperature)?;
                let mask = tape.rev_cumsum(sample.s)?;
                a = tape.mul_row(a, mask)?;

                let prior_lp = Tensor::new(1, size.prior.k, distributions::size_log_probs(&size.prior))?;
                let prior_lp = tape.leaf(prior_lp);
                let lq = distributions::tape_log_density_concrete_categorical(
                    tape,
                    sample.log_s,
                    log_pi,
                    size.temperature,
                )?;
                let lp = distributions::tape_log_density_concrete_categorical(
                    tape,
                    sample.log_s,
                    prior_lp,
                    size.temperature,
                )?;
                let term = tape.sub(lq, lp)?;
                kl_arch = Some(match kl_arch {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }

            // skip gate
            if let Some(skip) = &layer.skip {
                let logit = next_leaf();
                let eps = layer_noise
                    .skip_eps
                    .ok_or_else(|| Error::InvalidParam(format!("layer {i} missing skip noise")))?;
                let sample =
                    distributions::tape_sample_concrete_bernoulli(tape, logit, eps, skip.temperature)?;
                let keep = tape.neg(sample.gamma);
                let keep = tape.add_scalar(keep, 1.0);
                let keep_full = tape.expand(keep, batch, layer.spec.out_dim)?;
                let gate_full = tape.expand(sample.gamma, batch, layer.spec.out_dim)?;
                let through = tape.mul(a, keep_full)?;
                let around = tape.mul(h, gate_full)?;
                a = tape.add(through, around)?;

                let lq = distributions::tape_log_density_concrete_bernoulli(
                    tape,
                    logit,
                    &sample,
                    skip.temperature,
                )?;
                let prior_logit = tape.leaf(Tensor::scalar(math::logit(skip.prior_prob)));
                let lp = distributions::tape_log_density_concrete_bernoulli(
                    tape,
                    prior_logit,
                    &sample,
                    skip.temperature,
                )?;
                let term = tape.sub(lq, lp)?;
                kl_arch = Some(match kl_arch {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }

            h = a;
        }

        let y_leaf = tape.leaf(y.clone());
        let (nll, pred) = match self.likelihood {
            Likelihood::Gaussian { obs_sigma } => {
                let diff = tape.sub(h, y_leaf)?;
                let sq = tape.square(diff);
                let ssum = tape.sum(sq);
                let scaled = tape.mul_scalar(ssum, 0.5 / (obs_sigma * obs_sigma));
                let constant =
                    (batch * self.out_dim()) as f64 * (obs_sigma.ln() + 0.5 * math::LN_2PI);
                (tape.add_scalar(scaled, constant), h)
            }
            Likelihood::Categorical => {
                let logp = tape.log_softmax_t(final_z, 1.0)?;
                let picked = tape.mul(y_leaf, logp)?;
                let total = tape.sum(picked);
                let nll = tape.neg(total);
                let pred = tape.exp(logp);
                (nll, pred)
            }
        };
        let nll_scaled = tape.mul_scalar(nll, n_total as f64 / batch as f64);

        let kl_weights = kl_weights.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)));
        let kl_arch = kl_arch.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)));
        let kl_sum = tape.add(kl_weights, kl_arch)?;
        let kl_scaled = tape.mul_scalar(kl_sum, kl_scale);
        let total = tape.add(nll_scaled, kl_scaled)?;

        Ok(LossNodes {
            total,
            nll_scaled,
            kl_weights,
            kl_arch,
            pred,
        })
    }
}

// ---------------------------------------------------------------------------
// Plain forward passes
// ---------------------------------------------------------------------------

impl Network {
    /// Forward pass with explicit reparameterization noise: sampled weights,
    /// relaxed masks, relaxed gates. Mirrors the tape forward of `build_loss`.
    pub fn forward_with_noise(&self, x: &Tensor, noise: &StepNoise) -> Result<Tensor> {
        if noise.layers.len() != self.layers.len() {
            return Err(Error::InvalidParam("noise does not match network depth".into()));
        }
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward_input",
                lhs: (x.rows(), self.in_dim()),
                rhs: x.shape(),
            });
        }
        let mut h = x.clone();
        for (layer, layer_noise) in self.layers.iter().zip(&noise.layers) {
            let (w, b) = match &layer.weights {
                LayerWeights::Point { w, b } => (w.clone(), b.clone()),
                LayerWeights::Gaussian { w, b } => {
                    let w_eps = layer_noise
                        .w_eps
                        .as_ref()
                        .ok_or_else(|| Error::InvalidParam("missing weight noise".into()))?;
                    let b_eps = layer_noise
                        .b_eps
                        .as_ref()
                        .ok_or_else(|| Error::InvalidParam("missing bias noise".into()))?;
                    (
                        distributions::sample_gaussian(w, w_eps)?,
                        distributions::sample_gaussian(b, b_eps)?,
                    )
                }
            };
            let z = add_bias(h.matmul(&w)?, &b)?;
            let mut a = apply_activation_plain(&z, layer.spec.activation);
            if let Some(size) = &layer.size {
                let gumbels = layer_noise
                    .gumbels
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParam("missing size gumbels".into()))?;
                let params =
                    ConcreteCategoricalParams::new(distributions::size_probs(&size.post), size.temperature)?;
                let s = distributions::sample_concrete_categorical(&params, gumbels)?;
                let mask = build_size_mask(&s)?;
                a = mul_columns(&a, &mask)?;
            }
            if let Some(skip) = &layer.skip {
                let eps = layer_noise
                    .skip_eps
                    .ok_or_else(|| Error::InvalidParam("missing skip noise".into()))?;
                let params = distributions::ConcreteBernoulliParams::new(
                    math::sigmoid(skip.logit),
                    skip.temperature,
                )?;
                let gamma = distributions::sample_concrete_bernoulli(&params, eps);
                a = skip_forward(&a, &h, gamma)?;
            }
            h = a;
        }
        Ok(h)
    }

    /// Forward pass under freshly drawn noise.
    pub fn forward_sampled(&self, x: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let noise = self.sample_noise(rng);
        self.forward_with_noise(x, &noise)
    }

    /// Deterministic forward at posterior expectations: mean weights, the
    /// expected size mask (reverse cumsum of the size probabilities), and the
    /// expected skip gate. Smooth in the variational parameters, so it serves
    /// as the train metric and early-stopping signal.
    pub fn forward_mean_field(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward_input",
                lhs: (x.rows(), self.in_dim()),
                rhs: x.shape(),
            });
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let (w, b) = mean_weights(&layer.weights);
            let z = add_bias(h.matmul(w)?, b)?;
            let mut a = apply_activation_plain(&z, layer.spec.activation);
            if let Some(size) = &layer.size {
                let mask = build_size_mask(&distributions::size_probs(&size.post))?;
                a = mul_columns(&a, &mask)?;
            }
            if let Some(skip) = &layer.skip {
                a = skip_forward(&a, &h, math::sigmoid(skip.logit))?;
            }
            h = a;
        }
        Ok(h)
    }

    /// Overwrite every adapter's relaxation temperature (training owns them).
    pub fn set_temperatures(&mut self, tau_size: f64, tau_depth: f64) -> Result<()> {
        if !(tau_size > 0.0) || !(tau_depth > 0.0) {
            return Err(Error::InvalidParam("temperatures must be > 0".into()));
        }
        for layer in &mut self.layers {
            if let Some(size) = &mut layer.size {
                size.temperature = tau_size;
            }
            if let Some(skip) = &mut layer.skip {
                skip.temperature = tau_depth;
            }
        }
        Ok(())
    }

    /// Deterministic forward at the decoded architecture: mean weights, hard
    /// size masks, hard skip decisions.
    pub fn forward_decoded(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward_input",
                lhs: (x.rows(), self.in_dim()),
                rhs: x.shape(),
            });
        }
        let mut h = x.clone();
        for layer in &self.layers {
            if let Some(skip) = &layer.skip {
                if decode_skip_dropped(skip) {
                    continue;
                }
            }
            let (w, b) = mean_weights(&layer.weights);
            let z = add_bias(h.matmul(w)?, b)?;
            let mut a = apply_activation_plain(&z, layer.spec.activation);
            if let Some(size) = &layer.size {
                let mask = hard_size_mask(decode_size(size), size.post.k);
                a = mul_columns(&a, &mask)?;
            }
            h = a;
        }
        Ok(h)
    }
}

fn mean_weights(weights: &LayerWeights) -> (&Tensor, &Tensor) {
    match weights {
        LayerWeights::Point { w, b } => (w, b),
        LayerWeights::Gaussian { w, b } => (&w.mean, &b.mean),
    }
}

// ---------------------------------------------------------------------------
// Decoding and pruning
// ---------------------------------------------------------------------------

/// Most probable size; ties resolve to the smaller network.
pub fn decode_size(adapter: &SizeAdapter) -> usize {
    let probs = distributions::size_probs(&adapter.post);
    let mut best = 0usize;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in probs.data().iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = i;
        }
    }
    best + 1
}

/// A layer is dropped when the posterior favors skipping it.
pub fn decode_skip_dropped(adapter: &SkipAdapter) -> bool {
    math::sigmoid(adapter.logit) > 0.5
}

/// Decoded architecture choices, aligned with the layer list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedArch {
    pub sizes: Vec<Option<usize>>,
    pub dropped: Vec<bool>,
}

impl Network {
    pub fn decode(&self) -> DecodedArch {
        DecodedArch {
            sizes: self.layers.iter().map(|l| l.size.as_ref().map(decode_size)).collect(),
            dropped: self
                .layers
                .iter()
                .map(|l| l.skip.as_ref().map(decode_skip_dropped).unwrap_or(false))
                .collect(),
        }
    }

    /// Materialize the decoded architecture: dropped layers removed, kept
    /// layers sliced to their decoded width (weights preserved). The result
    /// computes the same function as `forward_decoded` on the full network.
    pub fn prune(&self) -> Result<Network> {
        self.validate()?;
        let decoded = self.decode();
        let mut layers = Vec::new();
        let mut carry = self.in_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            if decoded.dropped[i] {
                continue;
            }
            let keep_out = decoded.sizes[i].unwrap_or(layer.spec.out_dim);
            let weights = match &layer.weights {
                LayerWeights::Point { w, b } => LayerWeights::Point {
                    w: w.rows_head(carry).cols_head(keep_out),
                    b: b.cols_head(keep_out),
                },
                LayerWeights::Gaussian { w, b } => LayerWeights::Gaussian {
                    w: GaussianPosterior::new(
                        w.mean.rows_head(carry).cols_head(keep_out),
                        w.rho.rows_head(carry).cols_head(keep_out),
                    )?,
                    b: GaussianPosterior::new(b.mean.cols_head(keep_out), b.rho.cols_head(keep_out))?,
                },
            };
            layers.push(Layer {
                spec: DenseSpec {
                    in_dim: carry,
                    out_dim: keep_out,
                    activation: layer.spec.activation,
                    weight_mode: layer.spec.weight_mode,
                },
                weights,
                size: None,
                skip: None,
            });
            carry = keep_out;
        }
        if layers.is_empty() {
            return Err(Error::InvalidParam("pruning removed every layer".into()));
        }
        let net = Network {
            layers,
            likelihood: self.likelihood,
            weight_prior: self.weight_prior,
        };
        net.validate()?;
        Ok(net)
    }
}

// ---------------------------------------------------------------------------
// Architecture description (serialized to arch.json by the experiment runner)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SizePosteriorDesc {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkipPosteriorDesc {
    pub pi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArchLayerDesc {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_posterior: Option<SizePosteriorDesc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip_posterior: Option<SkipPosteriorDesc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoded_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArchDescription {
    pub layers: Vec<ArchLayerDesc>,
}

impl Network {
    pub fn describe(&self) -> ArchDescription {
        ArchDescription {
            layers: self
                .layers
                .iter()
                .map(|layer| ArchLayerDesc {
                    in_dim: layer.spec.in_dim,
                    out_dim: layer.spec.out_dim,
                    activation: layer.spec.activation.as_str().to_string(),
                    size_posterior: layer.size.as_ref().map(|s| SizePosteriorDesc {
                        mu: s.post.mu,
                        sigma: s.post.sigma(),
                    }),
                    skip_posterior: layer.skip.as_ref().map(|s| SkipPosteriorDesc {
                        pi: math::sigmoid(s.logit),
                    }),
                    decoded_size: layer.size.as_ref().map(decode_size),
                    dropped: layer.skip.as_ref().map(decode_skip_dropped),
                })
                .collect(),
        }
    }
}
