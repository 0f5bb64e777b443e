//! Reparameterized sampling and log-densities for the three distribution
//! families used by the model: Gaussians over weights, relaxed (concrete)
//! categoricals over layer sizes, and relaxed Bernoullis over skip gates.
//! Plain-math versions serve prediction, decoding, and tests; `tape_*`
//! builders express the same formulas as differentiable graphs.
//!
//! All density math is in log space. Linear-space forms of these densities
//! contain s^(-tau) factors that overflow long before the samples become
//! unusual.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Samples are kept this far from {0, 1} before any log is taken.
pub const SAMPLE_CLAMP: f64 = 1e-6;

/// Floor on grid log-probabilities, just above where exp underflows to zero.
/// Cells this unlikely are never sampled; flooring keeps logs finite when the
/// size posterior concentrates on a wide grid. The floor must stay far below
/// any reachable prior log-probability: clamping flattens the tail, and a
/// flat prior tail turns the architecture KL into pure entropy maximization,
/// which sends the posterior scale diverging.
pub const LOG_PROB_FLOOR: f64 = -700.0;

// ---------------------------------------------------------------------------
// Gaussian weights
// ---------------------------------------------------------------------------

/// Per-weight variational parameters; std = softplus(rho) keeps the scale
/// positive without a boundary.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    pub mean: Tensor,
    pub rho: Tensor,
}

impl GaussianPosterior {
    pub fn new(mean: Tensor, rho: Tensor) -> Result<Self> {
        if mean.shape() != rho.shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_posterior",
                lhs: mean.shape(),
                rhs: rho.shape(),
            });
        }
        Ok(GaussianPosterior { mean, rho })
    }

    pub fn sigma(&self) -> Tensor {
        self.rho.map(math::softplus)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean.shape()
    }
}

/// Zero-mean factorized Gaussian prior with one shared variance.
#[derive(Clone, Copy, Debug)]
pub struct GaussianPrior {
    pub sigma0: f64,
}

impl GaussianPrior {
    pub fn new(sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) {
            return Err(Error::InvalidParam(format!("prior sigma0 must be > 0, got {sigma0}")));
        }
        Ok(GaussianPrior { sigma0 })
    }
}

/// W = mean + softplus(rho) * eps, elementwise.
pub fn sample_gaussian(post: &GaussianPosterior, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != post.shape() {
        return Err(Error::ShapeMismatch {
            op: "sample_gaussian",
            lhs: post.shape(),
            rhs: noise.shape(),
        });
    }
    let sigma = post.sigma();
    post.mean.add(&sigma.mul_elem(noise)?)
}

/// Closed-form KL(N(mean, sigma^2) || N(0, sigma0^2)), summed over weights.
pub fn kl_gaussian_analytic(post: &GaussianPosterior, prior: &GaussianPrior) -> f64 {
    let s0 = prior.sigma0;
    let inv_2s0sq = 0.5 / (s0 * s0);
    post.mean
        .data()
        .iter()
        .zip(post.rho.data())
        .map(|(&mu, &rho)| {
            let sigma = math::softplus(rho);
            s0.ln() - sigma.ln() + (sigma * sigma + mu * mu) * inv_2s0sq - 0.5
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Concrete categorical
// ---------------------------------------------------------------------------

/// Simplex probabilities plus relaxation temperature.
#[derive(Clone, Debug)]
pub struct ConcreteCategoricalParams {
    probs: Tensor,
    temperature: f64,
}

impl ConcreteCategoricalParams {
    pub fn new(probs: Tensor, temperature: f64) -> Result<Self> {
        if probs.rows() != 1 || probs.cols() < 1 {
            return Err(Error::InvalidShape(format!(
                "probs must be a 1 x K row vector, got {}x{}",
                probs.rows(),
                probs.cols()
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidParam(format!("temperature must be > 0, got {temperature}")));
        }
        if probs.data().iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidParam("all probabilities must be > 0".into()));
        }
        let sum: f64 = probs.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::OffSimplex((sum - 1.0).abs()));
        }
        // Renormalize so downstream log-space identities hold to machine precision.
        Ok(ConcreteCategoricalParams {
            probs: probs.scale(1.0 / sum),
            temperature,
        })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn k(&self) -> usize {
        self.probs.cols()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.data().iter().map(|p| p.ln()).collect()
    }
}

/// s_i = exp((log pi_i + g_i)/tau) / sum_j exp((log pi_j + g_j)/tau).
/// Components are clamped away from 0 and renormalized, so the result stays
/// strictly inside the simplex and sums to 1.
pub fn sample_concrete_categorical(params: &ConcreteCategoricalParams, gumbel: &Tensor) -> Result<Tensor> {
    if gumbel.shape() != (1, params.k()) {
        return Err(Error::ShapeMismatch {
            op: "sample_concrete_categorical",
            lhs: (1, params.k()),
            rhs: gumbel.shape(),
        });
    }
    let tau = params.temperature;
    let u: Vec<f64> = params
        .log_probs()
        .iter()
        .zip(gumbel.data())
        .map(|(lp, g)| (lp + g) / tau)
        .collect();
    let lse = math::logsumexp(&u);
    let mut s: Vec<f64> = u.iter().map(|ui| (ui - lse).exp().max(SAMPLE_CLAMP)).collect();
    let total: f64 = s.iter().sum();
    for v in &mut s {
        *v /= total;
    }
    Tensor::new(1, params.k(), s)
}

fn log_density_categorical_from_logs(log_s: &[f64], log_pi: &[f64], tau: f64) -> f64 {
    let k = log_s.len();
    let mut sum_term = 0.0;
    let mut inner = Vec::with_capacity(k);
    for (&ls, &lp) in log_s.iter().zip(log_pi) {
        sum_term += lp - (tau + 1.0) * ls;
        inner.push(lp - tau * ls);
    }
    math::log_factorial(k - 1) + (k as f64 - 1.0) * tau.ln() + sum_term
        - k as f64 * math::logsumexp(&inner)
}

/// Log-density of the relaxed categorical at an interior simplex point:
/// log((K-1)!) + (K-1) log tau + sum_i [log pi_i - (tau+1) log s_i]
///   - K logsumexp_i(log pi_i - tau log s_i).
pub fn log_density_concrete_categorical(s: &Tensor, params: &ConcreteCategoricalParams) -> Result<f64> {
    if s.shape() != (1, params.k()) {
        return Err(Error::ShapeMismatch {
            op: "log_density_concrete_categorical",
            lhs: (1, params.k()),
            rhs: s.shape(),
        });
    }
    // Accept points produced by the clamped sampler: clamping then
    // renormalizing can push a component fractionally below the clamp.
    let min_ok = SAMPLE_CLAMP * 0.99;
    if let Some(&bad) = s.data().iter().find(|&&v| !(v >= min_ok && v <= 1.0)) {
        return Err(Error::OutsideUnitInterval(bad));
    }
    let gap = (s.sum() - 1.0).abs();
    if gap > 1e-6 {
        return Err(Error::OffSimplex(gap));
    }
    let log_s: Vec<f64> = s.data().iter().map(|v| v.ln()).collect();
    Ok(log_density_categorical_from_logs(&log_s, &params.log_probs(), params.temperature))
}

// ---------------------------------------------------------------------------
// Concrete Bernoulli
// ---------------------------------------------------------------------------

/// Success probability plus relaxation temperature.
#[derive(Clone, Copy, Debug)]
pub struct ConcreteBernoulliParams {
    pub prob: f64,
    pub temperature: f64,
}

impl ConcreteBernoulliParams {
    pub fn new(prob: f64, temperature: f64) -> Result<Self> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::InvalidParam(format!("prob must be in (0,1), got {prob}")));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidParam(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(ConcreteBernoulliParams { prob, temperature })
    }
}

/// s = sigmoid((logit(pi) + eps) / tau) with eps ~ Logistic(0, 1).
pub fn sample_concrete_bernoulli(params: &ConcreteBernoulliParams, logistic_noise: f64) -> f64 {
    let u = (math::logit(params.prob) + logistic_noise) / params.temperature;
    math::sigmoid(u).clamp(SAMPLE_CLAMP, 1.0 - SAMPLE_CLAMP)
}

fn log_density_bernoulli_from_logs(log_s: f64, log_1ms: f64, prob: f64, tau: f64) -> f64 {
    let lp = prob.ln();
    let l1p = (-prob).ln_1p();
    let a = lp - tau * log_s;
    let b = l1p - tau * log_1ms;
    tau.ln() + lp + l1p - (tau + 1.0) * (log_s + log_1ms) - 2.0 * math::lse2(a, b)
}

/// Log-density of the relaxed Bernoulli produced by the logit sampler:
/// log tau + log pi + log(1-pi) - (tau+1)(log s + log(1-s))
///   - 2 logsumexp(log pi - tau log s, log(1-pi) - tau log(1-s)).
/// This is the exact density of sigmoid((logit(pi) + eps)/tau); it integrates
/// to 1 and reduces to the K=2 categorical density with pi = pi_1/(pi_1+pi_2).
pub fn log_density_concrete_bernoulli(s: f64, params: &ConcreteBernoulliParams) -> Result<f64> {
    let min_ok = SAMPLE_CLAMP * 0.99;
    if !(s >= min_ok && s <= 1.0 - min_ok) {
        return Err(Error::OutsideUnitInterval(s));
    }
    Ok(log_density_bernoulli_from_logs(
        s.ln(),
        (-s).ln_1p(),
        params.prob,
        params.temperature,
    ))
}

// ---------------------------------------------------------------------------
// Truncated-normal size grid
// ---------------------------------------------------------------------------

/// Unconstrained parameters of the size distribution over {1..K}:
/// pi_i proportional to exp(-(i - mu)^2 / (2 softplus(sigma_raw)^2)).
/// The truncation constant of the underlying density cancels under grid
/// renormalization, so it is never computed.
#[derive(Clone, Copy, Debug)]
pub struct TruncNormSizeParams {
    pub mu: f64,
    pub sigma_raw: f64,
    pub k: usize,
}

impl TruncNormSizeParams {
    pub fn new(mu: f64, sigma_raw: f64, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidParam("size grid needs K >= 1".into()));
        }
        Ok(TruncNormSizeParams { mu, sigma_raw, k })
    }

    /// Construct from (mu, sigma) rather than the raw parameter.
    pub fn from_moments(mu: f64, sigma: f64, k: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParam(format!("sigma must be > 0, got {sigma}")));
        }
        TruncNormSizeParams::new(mu, math::inv_softplus(sigma), k)
    }

    pub fn sigma(&self) -> f64 {
        math::softplus(self.sigma_raw)
    }
}

/// Normalized log-probabilities over sizes 1..=K, floored at LOG_PROB_FLOOR.
pub fn size_log_probs(params: &TruncNormSizeParams) -> Vec<f64> {
    let sigma = params.sigma();
    let inv_2var = 0.5 / (sigma * sigma);
    let logits: Vec<f64> = (1..=params.k)
        .map(|i| -(i as f64 - params.mu).powi(2) * inv_2var)
        .collect();
    let lse = math::logsumexp(&logits);
    let mut lp: Vec<f64> = logits.iter().map(|l| (l - lse).max(LOG_PROB_FLOOR)).collect();
    // Flooring adds a vanishing amount of mass; renormalize it away.
    let lse2 = math::logsumexp(&lp);
    for v in &mut lp {
        *v -= lse2;
    }
    lp
}

/// Probabilities over sizes 1..=K as a 1 x K simplex row.
pub fn size_probs(params: &TruncNormSizeParams) -> Tensor {
    let probs: Vec<f64> = size_log_probs(params).iter().map(|lp| lp.exp()).collect();
    Tensor::new(1, params.k, probs).expect("size_probs shape")
}

// ---------------------------------------------------------------------------
// Monte-Carlo KL
// ---------------------------------------------------------------------------

/// (1/S) sum_j [log q(s_j) - log p(s_j)] with s_j drawn from q by the given
/// reparameterized sampler.
pub fn mc_kl<R, S, Q, P>(
    mut sampler: S,
    q_logpdf: Q,
    p_logpdf: P,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng,
    S: FnMut(&mut R) -> Tensor,
    Q: Fn(&Tensor) -> Result<f64>,
    P: Fn(&Tensor) -> Result<f64>,
{
    if n_samples == 0 {
        return Err(Error::InvalidParam("mc_kl needs n_samples >= 1".into()));
    }
    let mut acc = 0.0;
    for j in 0..n_samples {
        let s = sampler(rng);
        let lq = q_logpdf(&s)?;
        let lp = p_logpdf(&s)?;
        if !lq.is_finite() || !lp.is_finite() {
            return Err(Error::NonFinite(format!(
                "mc_kl log-density at sample {j}: log q = {lq}, log p = {lp}"
            )));
        }
        acc += lq - lp;
    }
    Ok(acc / n_samples as f64)
}

// ---------------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------------

/// mean + softplus(rho) * eps as tape nodes.
pub fn tape_sample_gaussian(tape: &mut Tape, mean: NodeId, rho: NodeId, eps: NodeId) -> Result<NodeId> {
    let sigma = tape.softplus(rho);
    let scaled = tape.mul(sigma, eps)?;
    tape.add(mean, scaled)
}

/// Analytic Gaussian KL as a scalar node.
pub fn tape_kl_gaussian(tape: &mut Tape, mean: NodeId, rho: NodeId, sigma0: f64) -> Result<NodeId> {
    let sigma = tape.softplus(rho);
    let log_sigma = tape.ln(sigma);
    let sq_sigma = tape.square(sigma);
    let sq_mean = tape.square(mean);
    let sq_sum = tape.add(sq_sigma, sq_mean)?;
    let scaled = tape.mul_scalar(sq_sum, 0.5 / (sigma0 * sigma0));
    let no_log = tape.add_scalar(scaled, sigma0.ln() - 0.5);
    let elem = tape.sub(no_log, log_sigma)?;
    Ok(tape.sum(elem))
}

/// Normalized grid log-probabilities (1 x K) from scalar mu / sigma_raw nodes.
pub fn tape_size_log_probs(tape: &mut Tape, mu: NodeId, sigma_raw: NodeId, k: usize) -> Result<NodeId> {
    let grid = tape.leaf(Tensor::linspace(1.0, k as f64, k));
    let sigma = tape.softplus(sigma_raw);
    let sq = tape.square(sigma);
    let two_var = tape.mul_scalar(sq, 2.0);
    let mu_row = tape.expand(mu, 1, k)?;
    let diff = tape.sub(grid, mu_row)?;
    let d2 = tape.square(diff);
    let two_var_row = tape.expand(two_var, 1, k)?;
    let ratio = tape.div(d2, two_var_row)?;
    let logits = tape.neg(ratio);
    let lse = tape.row_lse(logits);
    let log_pi = tape.sub_col(logits, lse)?;
    // Upper bound 1.0 is unreachable (log-probs are <= 0), so gradient always
    // flows at the mode; the floor bounds the far tail.
    Ok(tape.clamp(log_pi, LOG_PROB_FLOOR, 1.0))
}

/// Sample nodes of the relaxed categorical: log s for densities, s for masks.
pub struct CategoricalSampleNodes {
    pub log_s: NodeId,
    pub s: NodeId,
}

pub fn tape_sample_concrete_categorical(
    tape: &mut Tape,
    log_pi: NodeId,
    gumbel: NodeId,
    tau: f64,
) -> Result<CategoricalSampleNodes> {
    let perturbed = tape.add(log_pi, gumbel)?;
    let log_s = tape.log_softmax_t(perturbed, tau)?;
    let s = tape.exp(log_s);
    Ok(CategoricalSampleNodes { log_s, s })
}

pub fn tape_log_density_concrete_categorical(
    tape: &mut Tape,
    log_s: NodeId,
    log_pi: NodeId,
    tau: f64,
) -> Result<NodeId> {
    let k = tape.value(log_s).cols();
    let weighted = tape.mul_scalar(log_s, tau + 1.0);
    let diff = tape.sub(log_pi, weighted)?;
    let sum_term = tape.sum(diff);
    let inner_scaled = tape.mul_scalar(log_s, tau);
    let inner = tape.sub(log_pi, inner_scaled)?;
    let lse = tape.row_lse(inner);
    let k_lse = tape.mul_scalar(lse, k as f64);
    let core = tape.sub(sum_term, k_lse)?;
    Ok(tape.add_scalar(core, math::log_factorial(k - 1) + (k as f64 - 1.0) * tau.ln()))
}

/// Sample nodes of the relaxed Bernoulli. gamma is the gate value; the log
/// forms are exact (-softplus of the pre-activation) and never saturate.
pub struct BernoulliSampleNodes {
    pub gamma: NodeId,
    pub log_s: NodeId,
    pub log_one_minus_s: NodeId,
}

pub fn tape_sample_concrete_bernoulli(
    tape: &mut Tape,
    logit: NodeId,
    logistic_noise: f64,
    tau: f64,
) -> Result<BernoulliSampleNodes> {
    if !tape.value(logit).is_scalar() {
        return Err(Error::InvalidShape("bernoulli logit must be 1x1".into()));
    }
    let shifted = tape.add_scalar(logit, logistic_noise);
    let u = tape.mul_scalar(shifted, 1.0 / tau);
    let gamma = tape.sigmoid(u);
    let neg_u = tape.neg(u);
    let sp_neg = tape.softplus(neg_u);
    let log_s = tape.neg(sp_neg);
    let sp = tape.softplus(u);
    let log_one_minus_s = tape.neg(sp);
    Ok(BernoulliSampleNodes {
        gamma,
        log_s,
        log_one_minus_s,
    })
}

/// Log-density of a relaxed Bernoulli sample under the distribution whose
/// unconstrained log-odds is `logit` (pass the posterior leaf for log q, a
/// constant leaf for log p).
pub fn tape_log_density_concrete_bernoulli(
    tape: &mut Tape,
    logit: NodeId,
    sample: &BernoulliSampleNodes,
    tau: f64,
) -> Result<NodeId> {
    let neg_logit = tape.neg(logit);
    let sp_neg = tape.softplus(neg_logit);
    let log_p = tape.neg(sp_neg); // log pi
    let sp = tape.softplus(logit);
    let log_1mp = tape.neg(sp); // log(1 - pi)

    let ts = tape.mul_scalar(sample.log_s, tau);
    let a = tape.sub(log_p, ts)?;
    let t1ms = tape.mul_scalar(sample.log_one_minus_s, tau);
    let b = tape.sub(log_1mp, t1ms)?;
    let lse = tape.lse2(a, b)?;

    let log_probs = tape.add(log_p, log_1mp)?;
    let log_samples = tape.add(sample.log_s, sample.log_one_minus_s)?;
    let weighted = tape.mul_scalar(log_samples, tau + 1.0);
    let two_lse = tape.mul_scalar(lse, 2.0);
    let penalty = tape.add(weighted, two_lse)?;
    let core = tape.sub(log_probs, penalty)?;
    Ok(tape.add_scalar(core, tau.ln()))
}

// ---------------------------------------------------------------------------
// Quadrature oracles (used by tests and the acceptance suite)
// ---------------------------------------------------------------------------

/// Integral over (0,1) of the relaxed Bernoulli density by Simpson quadrature
/// under the substitution s = sigmoid(u); exact answer is 1.
pub fn bernoulli_density_integral(params: &ConcreteBernoulliParams, intervals: usize) -> f64 {
    simpson_over_logit_line(intervals, |log_s, log_1ms| {
        log_density_bernoulli_from_logs(log_s, log_1ms, params.prob, params.temperature)
    })
}

/// Integral over the K=2 simplex of the relaxed categorical density,
/// parameterized by the first coordinate; exact answer is 1.
pub fn categorical_density_integral_k2(params: &ConcreteCategoricalParams, intervals: usize) -> f64 {
    assert_eq!(params.k(), 2, "quadrature oracle covers K=2 only");
    let log_pi = params.log_probs();
    let tau = params.temperature();
    simpson_over_logit_line(intervals, |log_s, log_1ms| {
        log_density_categorical_from_logs(&[log_s, log_1ms], &log_pi, tau)
    })
}

/// KL(q || p) between relaxed Bernoullis by quadrature.
pub fn bernoulli_kl_quadrature(
    q: &ConcreteBernoulliParams,
    p: &ConcreteBernoulliParams,
    intervals: usize,
) -> f64 {
    // integrand: q(s) (log q(s) - log p(s)); same substitution as above.
    let h = 120.0 / intervals as f64;
    let mut acc = 0.0;
    for j in 0..=intervals {
        let u = -60.0 + j as f64 * h;
        let log_s = math::log_sigmoid(u);
        let log_1ms = math::log_sigmoid(-u);
        let lq = log_density_bernoulli_from_logs(log_s, log_1ms, q.prob, q.temperature);
        let lp = log_density_bernoulli_from_logs(log_s, log_1ms, p.prob, p.temperature);
        let val = (lq + log_s + log_1ms).exp() * (lq - lp);
        let w = if j == 0 || j == intervals {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * val;
    }
    acc * h / 3.0
}

fn simpson_over_logit_line(intervals: usize, log_density: impl Fn(f64, f64) -> f64) -> f64 {
    assert!(intervals >= 2 && intervals % 2 == 0);
    let h = 120.0 / intervals as f64;
    let mut acc = 0.0;
    for j in 0..=intervals {
        let u = -60.0 + j as f64 * h;
        let log_s = math::log_sigmoid(u);
        let log_1ms = math::log_sigmoid(-u);
        // d s / d u = s (1 - s); integrand in log space to dodge overflow.
        let log_val = log_density(log_s, log_1ms) + log_s + log_1ms;
        let val = log_val.exp();
        let w = if j == 0 || j == intervals {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * val;
    }
    acc * h / 3.0
}
