//! Measure the mean gradient on the size-posterior mean for a wide Bayesian
//! layer at several pinned positions: is there a consistent shrink force, and
//! what is its signal-to-noise ratio per training step?

use adarch::data::toy_periodic;
use adarch::layers::{Activation, Likelihood, MlpConfig, Network, SizePlan, WeightInit, WeightMode};
use adarch::training::elbo_step;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_points: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let init_sigma: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let ds = toy_periodic(n_points, 0.1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for mu0 in [250.0_f64, 150.0, 50.0] {
        let mut net = Network::mlp(
            &MlpConfig {
                in_dim: 1,
                hidden: vec![500],
                out_dim: 1,
                hidden_activation: Activation::Relu,
                weight_mode: WeightMode::Gaussian,
                likelihood: Likelihood::Gaussian { obs_sigma: 0.1 },
                prior_sigma: 1.0,
                weight_init: WeightInit::FanIn { sigma: init_sigma },
                size_plan: Some(SizePlan {
                    prior_mu: 250.0,
                    prior_sigma: 20.0,
                    temperature: 3.0,
                }),
                skip_plan: None,
            },
            &mut rng,
        )
        .unwrap();
        // pin the size posterior at the probe position
        net.layers[0].size.as_mut().unwrap().post.mu = mu0;

        let names = net.param_names();
        let mu_idx = names.iter().position(|n| n.contains("size_mu")).unwrap();
        let batch = 256.min(n_points);
        let idx: Vec<usize> = (0..batch).collect();
        let xb = ds.features.select_rows(&idx);
        let yb = ds.targets.select_rows(&idx);

        let reps = 300;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let (_, grads) = elbo_step(&net, &xb, &yb, n_points, 1.0, &mut rng).unwrap();
            let g = grads[mu_idx].item();
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        println!(
            "mu={mu0:6.1}  dL/dmu mean={mean:10.4}  std={:10.4}  (positive mean pushes size down)",
            var.sqrt()
        );
    }
}
