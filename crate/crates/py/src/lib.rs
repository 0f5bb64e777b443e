//! Python bindings: dense tensors, architecture-learning networks, the
//! relaxed-distribution primitives, and the experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::IntoPyObjectExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adarch::config::{parse_seed_list, ExperimentConfig};
use adarch::distributions::{
    log_density_concrete_bernoulli, log_density_concrete_categorical, sample_concrete_bernoulli,
    sample_concrete_categorical, size_log_probs, ConcreteBernoulliParams,
    ConcreteCategoricalParams, GaussianPosterior, GaussianPrior, TruncNormSizeParams,
};
use adarch::layers::{
    Activation, Likelihood, MlpConfig, Network as CoreNetwork, SizePlan, SkipPlan, WeightInit,
    WeightMode,
};
use adarch::predictive::{predict as core_predict, rmse as core_rmse, test_loglik};
use adarch::rng::{gumbel_row, logistic};
use adarch::training::{fit, FitData, TrainConfig};
use adarch::{math, Tensor as CoreTensor};

fn pyerr(e: adarch::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor_from_rows(rows: Vec<Vec<f64>>) -> PyResult<CoreTensor> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("need at least one row"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    CoreTensor::new(data.len() / cols.max(1), cols, data).map_err(pyerr)
}

fn rows_from_tensor(t: &CoreTensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|i| t.data()[i * t.cols()..(i + 1) * t.cols()].to_vec())
        .collect()
}

/// Dense row-major matrix of f64 values.
#[pyclass(name = "Tensor")]
struct PyTensor {
    inner: CoreTensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: tensor_from_rows(rows)?,
        })
    }

    /// (rows, cols)
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows(), self.inner.cols())
    }

    fn tolist(&self) -> Vec<Vec<f64>> {
        rows_from_tensor(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(rows={}, cols={})", self.inner.rows(), self.inner.cols())
    }
}

/// Feed-forward network whose hidden-layer widths and depth can themselves be
/// learned variationally alongside the weights.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: CoreNetwork,
}

#[allow(clippy::too_many_arguments)]
#[pymethods]
impl PyNetwork {
    /// Build a ReLU MLP with a Gaussian observation model.
    ///
    /// * `weight_mode`: "point" or "gaussian" (mean-field posterior per weight)
    /// * `init`: "fan-in" (uniform fan-in means, posterior std `init_sigma`)
    ///   or "from-prior" (posterior equals the prior; gaussian mode only)
    /// * `size_prior`: optional (mu, sigma, temperature) putting a learnable
    ///   truncated-normal width posterior on every hidden layer
    /// * `skip_prior`: optional (pi, temperature) putting a learnable bypass
    ///   gate on every square hidden layer
    #[new]
    #[pyo3(signature = (in_dim, hidden, out_dim=1, weight_mode="point",
                        obs_sigma=0.1, prior_sigma=1.0, init="fan-in",
                        init_sigma=0.05, size_prior=None, skip_prior=None,
                        seed=0))]
    fn new(
        in_dim: usize,
        hidden: Vec<usize>,
        out_dim: usize,
        weight_mode: &str,
        obs_sigma: f64,
        prior_sigma: f64,
        init: &str,
        init_sigma: f64,
        size_prior: Option<(f64, f64, f64)>,
        skip_prior: Option<(f64, f64)>,
        seed: u64,
    ) -> PyResult<Self> {
        let weight_mode = match weight_mode {
            "point" => WeightMode::Point,
            "gaussian" => WeightMode::Gaussian,
            other => {
                return Err(PyValueError::new_err(format!(
                    "weight_mode must be 'point' or 'gaussian', got '{other}'"
                )))
            }
        };
        let weight_init = match init {
            "fan-in" => WeightInit::FanIn { sigma: init_sigma },
            "from-prior" => WeightInit::FromPrior,
            other => {
                return Err(PyValueError::new_err(format!(
                    "init must be 'fan-in' or 'from-prior', got '{other}'"
                )))
            }
        };
        let cfg = MlpConfig {
            in_dim,
            hidden,
            out_dim,
            hidden_activation: Activation::Relu,
            weight_mode,
            likelihood: Likelihood::Gaussian { obs_sigma },
            prior_sigma,
            weight_init,
            size_plan: size_prior.map(|(prior_mu, prior_sigma, temperature)| SizePlan {
                prior_mu,
                prior_sigma,
                temperature,
            }),
            skip_plan: skip_prior.map(|(prior_prob, temperature)| SkipPlan {
                prior_prob,
                temperature,
            }),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PyNetwork {
            inner: CoreNetwork::mlp(&cfg, &mut rng).map_err(pyerr)?,
        })
    }

    /// Train with the evidence-lower-bound objective; returns one dict per
    /// epoch with keys epoch / nll / kl_weights / kl_arch / train_rmse.
    /// Relaxation temperatures default to the ones the network was built with.
    #[pyo3(signature = (x, y, epochs, batch_size=32, learning_rate=1e-3,
                        seed=0, kl_scale=1.0, tau_size=None, tau_depth=None))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
        kl_scale: f64,
        tau_size: Option<f64>,
        tau_depth: Option<f64>,
    ) -> PyResult<Vec<Py<PyDict>>> {
        let x = tensor_from_rows(x)?;
        let y = tensor_from_rows(y)?;
        let mut cfg = TrainConfig::new(epochs, batch_size, learning_rate, seed);
        cfg.kl_scale = kl_scale;
        // `fit` writes the config temperatures onto every adapter, so absent
        // an explicit override we forward whatever the adapters already use.
        cfg.tau_size = tau_size
            .or_else(|| self.inner.layers.iter().find_map(|l| l.size.as_ref().map(|s| s.temperature)))
            .unwrap_or(1.0);
        cfg.tau_depth = tau_depth
            .or_else(|| self.inner.layers.iter().find_map(|l| l.skip.as_ref().map(|s| s.temperature)))
            .unwrap_or(1.0);
        let data = FitData::train_only(&x, &y);
        let log = fit(&mut self.inner, &data, &cfg).map_err(pyerr)?;
        log.epochs
            .iter()
            .map(|rec| {
                let d = PyDict::new(py);
                d.set_item("epoch", rec.epoch)?;
                d.set_item("nll", rec.nll)?;
                d.set_item("kl_weights", rec.kl_weights)?;
                d.set_item("kl_arch", rec.kl_arch)?;
                d.set_item("train_rmse", rec.train_metric)?;
                Ok(d.unbind())
            })
            .collect()
    }

    /// Monte-Carlo posterior-predictive mean (list of rows). With
    /// `return_samples=True` returns (mean, samples) instead.
    #[pyo3(signature = (x, n_samples=100, seed=0, return_samples=false))]
    fn predict(
        &self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        n_samples: usize,
        seed: u64,
        return_samples: bool,
    ) -> PyResult<Py<PyAny>> {
        let x = tensor_from_rows(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = core_predict(&self.inner, &x, n_samples, &mut rng).map_err(pyerr)?;
        let mean = rows_from_tensor(&result.mean);
        if return_samples {
            let samples: Vec<Vec<Vec<f64>>> = result.samples.iter().map(rows_from_tensor).collect();
            (mean, samples).into_py_any(py)
        } else {
            mean.into_py_any(py)
        }
    }

    /// Deterministic forward pass at the posterior means with the expected
    /// architecture (soft masks and gates at their mean values).
    fn predict_mean_field(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = tensor_from_rows(x)?;
        Ok(rows_from_tensor(
            &self.inner.forward_mean_field(&x).map_err(pyerr)?,
        ))
    }

    /// Predictive RMSE and test log-likelihood on held-out data.
    #[pyo3(signature = (x, y, n_samples=100, seed=0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        n_samples: usize,
        seed: u64,
    ) -> PyResult<Py<PyDict>> {
        let x = tensor_from_rows(x)?;
        let y = tensor_from_rows(y)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = core_predict(&self.inner, &x, n_samples, &mut rng).map_err(pyerr)?;
        let obs_sigma = match self.inner.likelihood {
            Likelihood::Gaussian { obs_sigma } => obs_sigma,
            _ => return Err(PyValueError::new_err("evaluate needs a Gaussian likelihood")),
        };
        let d = PyDict::new(py);
        d.set_item("rmse", core_rmse(&result.mean, &y).map_err(pyerr)?)?;
        d.set_item(
            "test_loglik",
            test_loglik(&result.samples, &y, obs_sigma).map_err(pyerr)?,
        )?;
        Ok(d.unbind())
    }

    /// Most probable width of each hidden layer (None where the layer has no
    /// size posterior).
    fn decoded_sizes(&self) -> Vec<Option<usize>> {
        self.inner.decode().sizes
    }

    /// Whether each layer's bypass gate decodes to "dropped" (posterior
    /// bypass probability above one half).
    fn dropped_layers(&self) -> Vec<bool> {
        self.inner.decode().dropped
    }

    /// Posterior bypass probability of every gated layer.
    fn skip_probs(&self) -> Vec<f64> {
        self.inner
            .layers
            .iter()
            .filter_map(|l| l.skip.as_ref().map(|s| math::sigmoid(s.logit)))
            .collect()
    }

    /// (mu, sigma) of each layer's width posterior, for gated layers.
    fn size_posteriors(&self) -> Vec<Option<(f64, f64)>> {
        self.inner
            .layers
            .iter()
            .map(|l| l.size.as_ref().map(|s| (s.post.mu, s.post.sigma())))
            .collect()
    }

    /// Per-layer architecture summary as dicts.
    fn describe(&self, py: Python<'_>) -> PyResult<Vec<Py<PyDict>>> {
        self.inner
            .describe()
            .layers
            .iter()
            .map(|l| {
                let d = PyDict::new(py);
                d.set_item("in_dim", l.in_dim)?;
                d.set_item("out_dim", l.out_dim)?;
                d.set_item("activation", &l.activation)?;
                d.set_item("size_mu", l.size_posterior.as_ref().map(|s| s.mu))?;
                d.set_item("size_sigma", l.size_posterior.as_ref().map(|s| s.sigma))?;
                d.set_item("skip_pi", l.skip_posterior.as_ref().map(|s| s.pi))?;
                d.set_item("decoded_size", l.decoded_size)?;
                d.set_item("dropped", l.dropped)?;
                Ok(d.unbind())
            })
            .collect()
    }

    /// Materialize the decoded architecture: dropped layers removed and kept
    /// layers sliced to their decoded widths, weights preserved.
    fn prune(&self) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: self.inner.prune().map_err(pyerr)?,
        })
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    fn __repr__(&self) -> String {
        let dims: Vec<String> = self
            .inner
            .layers
            .iter()
            .map(|l| l.spec.out_dim.to_string())
            .collect();
        format!(
            "Network(in={}, dims=[{}], layers={})",
            self.inner.in_dim(),
            dims.join(", "),
            self.inner.layers.len()
        )
    }
}

/// Log-density of the relaxed Bernoulli at `s` in (0,1).
#[pyfunction]
#[pyo3(name = "concrete_bernoulli_log_density")]
fn py_concrete_bernoulli_log_density(s: f64, pi: f64, temperature: f64) -> PyResult<f64> {
    let params = ConcreteBernoulliParams::new(pi, temperature).map_err(pyerr)?;
    log_density_concrete_bernoulli(s, &params).map_err(pyerr)
}

/// Log-density of the relaxed categorical at simplex point `s`.
#[pyfunction]
#[pyo3(name = "concrete_categorical_log_density")]
fn py_concrete_categorical_log_density(
    s: Vec<f64>,
    probs: Vec<f64>,
    temperature: f64,
) -> PyResult<f64> {
    let k = probs.len();
    let params = ConcreteCategoricalParams::new(
        CoreTensor::new(1, k, probs).map_err(pyerr)?,
        temperature,
    )
    .map_err(pyerr)?;
    let s = CoreTensor::new(1, s.len(), s).map_err(pyerr)?;
    log_density_concrete_categorical(&s, &params).map_err(pyerr)
}

/// Draw `n` relaxed Bernoulli samples.
#[pyfunction]
#[pyo3(name = "sample_concrete_bernoulli", signature = (pi, temperature, seed, n=1))]
fn py_sample_concrete_bernoulli(pi: f64, temperature: f64, seed: u64, n: usize) -> PyResult<Vec<f64>> {
    let params = ConcreteBernoulliParams::new(pi, temperature).map_err(pyerr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| sample_concrete_bernoulli(&params, logistic(&mut rng)))
        .collect())
}

/// Draw `n` relaxed categorical samples (each a point on the simplex).
#[pyfunction]
#[pyo3(name = "sample_concrete_categorical", signature = (probs, temperature, seed, n=1))]
fn py_sample_concrete_categorical(
    probs: Vec<f64>,
    temperature: f64,
    seed: u64,
    n: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let k = probs.len();
    let params = ConcreteCategoricalParams::new(
        CoreTensor::new(1, k, probs).map_err(pyerr)?,
        temperature,
    )
    .map_err(pyerr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let g = gumbel_row(k, &mut rng);
            sample_concrete_categorical(&params, &g)
                .map(|t| t.data().to_vec())
                .map_err(pyerr)
        })
        .collect()
}

/// Probabilities the truncated-normal width posterior (mu, sigma) assigns to
/// sizes 1..=k.
#[pyfunction]
fn size_grid_probs(mu: f64, sigma: f64, k: usize) -> PyResult<Vec<f64>> {
    let params = TruncNormSizeParams::from_moments(mu, sigma, k).map_err(pyerr)?;
    Ok(size_log_probs(&params).into_iter().map(f64::exp).collect())
}

/// Analytic KL from a diagonal-Gaussian posterior N(mu_i, sigma_i^2) to the
/// zero-mean isotropic prior N(0, prior_sigma^2), summed over entries.
#[pyfunction]
fn gaussian_kl(mu: Vec<f64>, sigma: Vec<f64>, prior_sigma: f64) -> PyResult<f64> {
    if mu.len() != sigma.len() {
        return Err(PyValueError::new_err("mu and sigma must have equal length"));
    }
    if sigma.iter().any(|&s| s <= 0.0) {
        return Err(PyValueError::new_err("sigma entries must be positive"));
    }
    let n = mu.len();
    let rho: Vec<f64> = sigma.iter().map(|&s| math::inv_softplus(s)).collect();
    let post = GaussianPosterior::new(
        CoreTensor::new(1, n, mu).map_err(pyerr)?,
        CoreTensor::new(1, n, rho).map_err(pyerr)?,
    )
    .map_err(pyerr)?;
    let prior = GaussianPrior::new(prior_sigma).map_err(pyerr)?;
    Ok(adarch::distributions::kl_gaussian_analytic(&post, &prior))
}

/// Run a full experiment from a config file, exactly like the command-line
/// runner: toy-size, toy-depth, uci, or bandit, selected by the config's
/// `kind` key.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, seeds=None, full_scale=false))]
fn run_experiment(
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    seeds: Option<String>,
    full_scale: bool,
) -> PyResult<()> {
    let mut cfg = ExperimentConfig::load(&config_path).map_err(pyerr)?;
    if let Some(dir) = out_dir {
        cfg.set_out_dir(dir);
    }
    if let Some(list) = seeds {
        cfg.set_seeds(parse_seed_list(&list).map_err(pyerr)?).map_err(pyerr)?;
    }
    cfg.validate().map_err(pyerr)?;
    adarch::experiments::run_experiment(&cfg, full_scale).map_err(pyerr)
}

/// Library version string.
#[pyfunction]
fn version() -> &'static str {
    adarch::VERSION
}

#[pymodule]
pub fn adarch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(py_concrete_bernoulli_log_density, m)?)?;
    m.add_function(wrap_pyfunction!(py_concrete_categorical_log_density, m)?)?;
    m.add_function(wrap_pyfunction!(py_sample_concrete_bernoulli, m)?)?;
    m.add_function(wrap_pyfunction!(py_sample_concrete_categorical, m)?)?;
    m.add_function(wrap_pyfunction!(size_grid_probs, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
