//! Rigid-width baseline on the periodic toy task: how much does train RMSE
//! improve as the fixed hidden width grows? Sanity input for interpreting
//! the learned-size equilibrium.

use adarch::data::toy_periodic;
use adarch::layers::{Activation, Likelihood, MlpConfig, Network, WeightInit, WeightMode};
use adarch::training::{fit, FitData, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let ds = toy_periodic(2000, 0.1, 1).unwrap();
    for k in [8usize, 12, 14, 18, 22, 30, 50] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Network::mlp(
            &MlpConfig {
                in_dim: 1,
                hidden: vec![k],
                out_dim: 1,
                hidden_activation: Activation::Relu,
                weight_mode: WeightMode::Point,
                likelihood: Likelihood::Gaussian { obs_sigma: 0.1 },
                prior_sigma: 1.0,
                weight_init: WeightInit::FanIn { sigma: std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(0.05) },
                size_plan: None,
                skip_plan: None,
            },
            &mut rng,
        )
        .unwrap();
        let cfg = TrainConfig::new(2000, 256, 0.01, 1);
        let log = fit(&mut net, &FitData::train_only(&ds.features, &ds.targets), &cfg).unwrap();
        let last = log.epochs.last().unwrap();
        println!("k={k:3} train_rmse={:.4} nll={:.1}", last.train_metric, last.nll);
    }
}
