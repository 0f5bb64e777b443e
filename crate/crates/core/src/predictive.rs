//! Posterior-predictive estimation: Monte-Carlo averages over joint samples
//! of weights and architecture, plus the evaluation metrics reported by the
//! experiment runner.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Network;
use crate::math;
use crate::tensor::Tensor;

/// Monte-Carlo predictive summary: per-sample forward passes and their mean.
#[derive(Clone, Debug)]
pub struct PredictiveResult {
    pub mean: Tensor,
    pub samples: Vec<Tensor>,
    pub n_samples: usize,
}

/// Average of `n_samples` forward passes, each under fresh weight and
/// architecture noise.
pub fn predict(net: &Network, x: &Tensor, n_samples: usize, rng: &mut impl Rng) -> Result<PredictiveResult> {
    if n_samples < 1 {
        return Err(Error::InvalidParam("predict needs n_samples >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n_samples);
    let mut mean = Tensor::zeros(x.rows(), net.out_dim());
    for _ in 0..n_samples {
        let pred = net.forward_sampled(x, rng)?;
        mean.add_assign(&pred)?;
        samples.push(pred);
    }
    Ok(PredictiveResult {
        mean: mean.scale(1.0 / n_samples as f64),
        samples,
        n_samples,
    })
}

/// Root mean squared error over all entries.
pub fn rmse(pred_mean: &Tensor, target: &Tensor) -> Result<f64> {
    if pred_mean.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "rmse",
            lhs: pred_mean.shape(),
            rhs: target.shape(),
        });
    }
    if pred_mean.len() == 0 {
        return Err(Error::InvalidParam("rmse of an empty set".into()));
    }
    let sse: f64 = pred_mean
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok((sse / pred_mean.len() as f64).sqrt())
}

/// Test log-likelihood under a Gaussian observation model: per point, the log
/// of the sample-averaged likelihood (log-mean-exp of per-sample log
/// densities), then averaged over points. This is the MC estimate of the
/// marginal predictive density, not the average of per-sample scores.
pub fn test_loglik(samples: &[Tensor], target: &Tensor, obs_sigma: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParam("test_loglik needs at least one sample".into()));
    }
    if target.rows() == 0 {
        return Err(Error::InvalidParam("test_loglik of an empty set".into()));
    }
    if !(obs_sigma > 0.0) {
        return Err(Error::InvalidParam(format!("obs_sigma must be > 0, got {obs_sigma}")));
    }
    for s in samples {
        if s.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "test_loglik",
                lhs: target.shape(),
                rhs: s.shape(),
            });
        }
    }
    let mut acc = 0.0;
    let mut point_logs = vec![0.0; samples.len()];
    for r in 0..target.rows() {
        for (j, s) in samples.iter().enumerate() {
            // multi-output points multiply their per-dimension densities
            point_logs[j] = (0..target.cols())
                .map(|c| math::gaussian_logpdf(target.get(r, c), s.get(r, c), obs_sigma))
                .sum();
        }
        acc += math::logsumexp(&point_logs) - (samples.len() as f64).ln();
    }
    Ok(acc / target.rows() as f64)
}
