//! Mushroom contextual bandit: environment with the classic asymmetric
//! reward scheme, a FIFO replay buffer, and greedy / epsilon-greedy /
//! Thompson-sampling agents whose reward model is fine-tuned online with one
//! buffer epoch per interaction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{MushroomClass, MushroomData};
use crate::error::{Error, Result};
use crate::layers::{
    Activation, Likelihood, MlpConfig, Network, SizePlan, WeightInit, WeightMode,
};
use crate::training::{elbo_step, Adam};
use crate::tensor::Tensor;

pub const REWARD_EDIBLE_CONSUME: f64 = 5.0;
pub const REWARD_POISON_GOOD: f64 = 5.0;
pub const REWARD_POISON_BAD: f64 = -35.0;
pub const REWARD_REJECT: f64 = 0.0;
/// Rewards are divided by this before entering the network so the regression
/// targets sit in [-1, 1]; reported metrics are in raw reward units.
pub const REWARD_SCALE: f64 = 35.0;
pub const BUFFER_CAPACITY: usize = 4096;

// ---------------------------------------------------------------------------
// Actions and rewards
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Reject,
    Consume,
}

impl Action {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Action::Reject => [1.0, 0.0],
            Action::Consume => [0.0, 1.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Reject => "reject",
            Action::Consume => "consume",
        }
    }
}

/// Expected reward of an action given the mushroom's true class; consuming a
/// poisonous mushroom is worth 0.5(-35) + 0.5(+5) = -15 in expectation.
pub fn expected_reward(label: MushroomClass, action: Action) -> f64 {
    match (label, action) {
        (_, Action::Reject) => REWARD_REJECT,
        (MushroomClass::Edible, Action::Consume) => REWARD_EDIBLE_CONSUME,
        (MushroomClass::Poisonous, Action::Consume) => {
            0.5 * REWARD_POISON_BAD + 0.5 * REWARD_POISON_GOOD
        }
    }
}

/// The oracle consumes edible mushrooms and rejects poisonous ones.
pub fn oracle_expected(label: MushroomClass) -> f64 {
    match label {
        MushroomClass::Edible => REWARD_EDIBLE_CONSUME,
        MushroomClass::Poisonous => REWARD_REJECT,
    }
}

/// Per-step regret: oracle expected reward minus the expected reward of the
/// action actually chosen. Always nonnegative.
pub fn step_regret(label: MushroomClass, action: Action) -> f64 {
    oracle_expected(label) - expected_reward(label, action)
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

/// Serves uniformly random mushroom contexts and realizes rewards, including
/// the 50/50 coin flip on poisonous consumption. Fully deterministic per
/// seed.
pub struct MushroomBandit {
    contexts: Tensor,
    labels: Vec<MushroomClass>,
    /// Context draws and reward coin flips use separate streams of the same
    /// seeded generator, so every agent run on a seed sees the identical
    /// context sequence no matter which actions it takes.
    context_rng: ChaCha8Rng,
    reward_rng: ChaCha8Rng,
}

impl MushroomBandit {
    pub fn new(data: MushroomData, seed: u64) -> Result<MushroomBandit> {
        if data.labels.is_empty() {
            return Err(Error::InvalidParam("mushroom table is empty".into()));
        }
        if data.contexts.rows() != data.labels.len() {
            return Err(Error::ShapeMismatch {
                op: "mushroom_bandit",
                lhs: data.contexts.shape(),
                rhs: (data.labels.len(), 1),
            });
        }
        let mut context_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reward_rng = ChaCha8Rng::seed_from_u64(seed);
        context_rng.set_stream(0);
        reward_rng.set_stream(1);
        Ok(MushroomBandit {
            contexts: data.contexts,
            labels: data.labels,
            context_rng,
            reward_rng,
        })
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.cols()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, idx: usize) -> MushroomClass {
        self.labels[idx]
    }

    pub fn context_row(&self, idx: usize) -> Tensor {
        self.contexts.select_rows(&[idx])
    }

    /// Draw the next context uniformly at random.
    pub fn draw_context(&mut self) -> usize {
        self.context_rng.gen_range(0..self.labels.len())
    }

    /// Realize the reward for an action, consuming environment randomness
    /// only for the poisonous-consume coin flip.
    pub fn realized_reward(&mut self, idx: usize, action: Action) -> f64 {
        match (self.labels[idx], action) {
            (_, Action::Reject) => REWARD_REJECT,
            (MushroomClass::Edible, Action::Consume) => REWARD_EDIBLE_CONSUME,
            (MushroomClass::Poisonous, Action::Consume) => {
                if self.reward_rng.gen_bool(0.5) {
                    REWARD_POISON_BAD
                } else {
                    REWARD_POISON_GOOD
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Experience {
    pub context: Vec<f64>,
    pub context_id: usize,
    pub action: Action,
    /// Realized reward in raw units.
    pub reward: f64,
    /// Expected reward of (context, action), kept for the estimate-error
    /// metric.
    pub expected_reward: f64,
}

/// Fixed-capacity FIFO ring of experiences; the oldest entry is evicted
/// first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    entries: std::collections::VecDeque<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new() -> ReplayBuffer {
        ReplayBuffer::with_capacity(BUFFER_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0, "buffer capacity must be positive");
        ReplayBuffer {
            entries: std::collections::VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, exp: Experience) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(exp);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.entries.iter()
    }
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        ReplayBuffer::new()
    }
}

// ---------------------------------------------------------------------------
// Action selection
// ---------------------------------------------------------------------------

/// Stack the two (context ++ one-hot action) rows the reward network scores:
/// row 0 is reject, row 1 is consume.
pub fn decision_inputs(context: &Tensor) -> Result<Tensor> {
    if context.rows() != 1 {
        return Err(Error::InvalidShape(format!(
            "context must be a single row, got {}x{}",
            context.rows(),
            context.cols()
        )));
    }
    let d = context.cols();
    let mut x = Tensor::zeros(2, d + 2);
    for (row, action) in [(0, Action::Reject), (1, Action::Consume)] {
        for c in 0..d {
            x.set(row, c, context.get(0, c));
        }
        let oh = action.one_hot();
        x.set(row, d, oh[0]);
        x.set(row, d + 1, oh[1]);
    }
    Ok(x)
}

fn argmax_action(estimates: &Tensor) -> Action {
    // strict comparison: ties go to reject
    if estimates.get(1, 0) > estimates.get(0, 0) {
        Action::Consume
    } else {
        Action::Reject
    }
}

/// Thompson sampling: draw one posterior sample of weights and architecture,
/// score both actions under that single sample, act greedily on it.
pub fn choose_thompson(net: &Network, context: &Tensor, rng: &mut impl Rng) -> Result<Action> {
    let x = decision_inputs(context)?;
    let estimates = net.forward_sampled(&x, rng)?;
    Ok(argmax_action(&estimates))
}

/// Greedy action under the deterministic mean network.
pub fn choose_greedy(net: &Network, context: &Tensor) -> Result<Action> {
    let x = decision_inputs(context)?;
    let estimates = net.forward_mean_field(&x)?;
    Ok(argmax_action(&estimates))
}

/// Greedy with probability 1 - epsilon, otherwise a uniformly random action.
pub fn choose_epsilon(
    net: &Network,
    context: &Tensor,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<Action> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParam(format!("epsilon must be in [0,1], got {epsilon}")));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(if rng.gen_bool(0.5) { Action::Consume } else { Action::Reject })
    } else {
        choose_greedy(net, context)
    }
}

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum AgentKind {
    Greedy,
    EpsilonGreedy { epsilon: f64 },
    ThompsonRigid,
    ThompsonAdaptive,
    /// Rigid Thompson agent whose hidden widths come from a completed
    /// adaptive run's decoded size posteriors.
    ThompsonWarmstart { hidden: Vec<usize> },
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Greedy => "greedy",
            AgentKind::EpsilonGreedy { .. } => "epsilon-greedy",
            AgentKind::ThompsonRigid => "thompson-rigid",
            AgentKind::ThompsonAdaptive => "thompson-adaptive",
            AgentKind::ThompsonWarmstart { .. } => "thompson-warmstart",
        }
    }
}

/// Shared agent hyperparameters. Defaults follow the experiment protocol:
/// two hidden layers of 100 ReLU units, size prior centered at 50 with
/// spread 20 for the adaptive agent, learning rate 0.0005, initial weight
/// spread 0.02, one 64-row-batch epoch over the buffer per interaction.
#[derive(Clone, Debug)]
pub struct AgentSettings {
    pub hidden: Vec<usize>,
    pub size_prior_mu: f64,
    pub size_prior_sigma: f64,
    pub temperature: f64,
    pub prior_sigma: f64,
    pub obs_sigma: f64,
    pub init_sigma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub kl_scale: f64,
    pub buffer_capacity: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            hidden: vec![100, 100],
            size_prior_mu: 50.0,
            size_prior_sigma: 20.0,
            temperature: 1.0,
            prior_sigma: 1.0,
            obs_sigma: 0.5,
            init_sigma: 0.02,
            learning_rate: 5e-4,
            batch_size: 64,
            kl_scale: 1.0,
            buffer_capacity: BUFFER_CAPACITY,
        }
    }
}

/// Outcome of one fine-tuning epoch over the buffer.
#[derive(Clone, Copy, Debug, Default)]
pub struct FineTuneStats {
    pub batches: usize,
    pub divergent_batches: usize,
    pub mean_loss: f64,
}

/// A bandit agent: reward network, persistent optimizer, replay buffer, and
/// its own random stream.
pub struct BanditAgent {
    pub kind: AgentKind,
    pub settings: AgentSettings,
    pub net: Network,
    pub adam: Adam,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    pub divergent_batches: usize,
}

impl BanditAgent {
    pub fn new(kind: AgentKind, settings: AgentSettings, context_dim: usize, seed: u64) -> Result<BanditAgent> {
        if let AgentKind::EpsilonGreedy { epsilon } = kind {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::InvalidParam(format!("epsilon must be in [0,1], got {epsilon}")));
            }
        }
        if settings.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be positive".into()));
        }
        let weight_mode = match kind {
            AgentKind::Greedy | AgentKind::EpsilonGreedy { .. } => WeightMode::Point,
            _ => WeightMode::Gaussian,
        };
        let hidden = match &kind {
            AgentKind::ThompsonWarmstart { hidden } => hidden.clone(),
            _ => settings.hidden.clone(),
        };
        if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParam(format!("bad hidden widths {hidden:?}")));
        }
        let size_plan = match kind {
            AgentKind::ThompsonAdaptive => Some(SizePlan {
                prior_mu: settings.size_prior_mu,
                prior_sigma: settings.size_prior_sigma,
                temperature: settings.temperature,
            }),
            _ => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::mlp(
            &MlpConfig {
                in_dim: context_dim + 2,
                hidden,
                out_dim: 1,
                hidden_activation: Activation::Relu,
                weight_mode,
                likelihood: Likelihood::Gaussian {
                    obs_sigma: settings.obs_sigma,
                },
                prior_sigma: settings.prior_sigma,
                weight_init: WeightInit::FanIn {
                    sigma: settings.init_sigma,
                },
                size_plan,
                skip_plan: None,
            },
            &mut rng,
        )?;
        let adam = Adam::new(settings.learning_rate, 0.9, 0.999, 1e-8);
        let buffer = ReplayBuffer::with_capacity(settings.buffer_capacity);
        Ok(BanditAgent {
            kind,
            settings,
            net,
            adam,
            buffer,
            rng,
            divergent_batches: 0,
        })
    }

    pub fn choose(&mut self, context: &Tensor) -> Result<Action> {
        match self.kind {
            AgentKind::Greedy => choose_greedy(&self.net, context),
            AgentKind::EpsilonGreedy { epsilon } => {
                choose_epsilon(&self.net, context, epsilon, &mut self.rng)
            }
            _ => choose_thompson(&self.net, context, &mut self.rng),
        }
    }

    fn batch_inputs(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let d = self.net.in_dim();
        let mut x = Tensor::zeros(idx.len(), d);
        let mut y = Tensor::zeros(idx.len(), 1);
        for (r, &i) in idx.iter().enumerate() {
            let exp = self.buffer.get(i);
            for (c, &v) in exp.context.iter().enumerate() {
                x.set(r, c, v);
            }
            let oh = exp.action.one_hot();
            x.set(r, d - 2, oh[0]);
            x.set(r, d - 1, oh[1]);
            y.set(r, 0, exp.reward / REWARD_SCALE);
        }
        (x, y)
    }

    /// One epoch of variational fitting over the whole buffer. Batches whose
    /// loss or gradients go non-finite are counted and skipped; the run
    /// continues with the last finite parameters.
    pub fn fine_tune_epoch(&mut self) -> Result<FineTuneStats> {
        let n = self.buffer.len();
        if n == 0 {
            return Ok(FineTuneStats::default());
        }
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut stats = FineTuneStats::default();
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.settings.batch_size) {
            let (x, y) = self.batch_inputs(chunk);
            match elbo_step(&self.net, &x, &y, n, self.settings.kl_scale, &mut self.rng) {
                Ok((terms, grads)) => {
                    let mut params = self.net.param_values();
                    self.adam.step(&mut params, &grads)?;
                    match self.net.set_params(&params) {
                        Ok(()) => {
                            stats.batches += 1;
                            loss_sum += terms.total();
                        }
                        Err(Error::NonFinite(_)) => {
                            stats.divergent_batches += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(Error::NonFinite(_)) => {
                    stats.divergent_batches += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if stats.batches > 0 {
            stats.mean_loss = loss_sum / stats.batches as f64;
        }
        self.divergent_batches += stats.divergent_batches;
        Ok(stats)
    }

    /// Root-mean-square error of the mean network's reward estimates against
    /// the expected rewards of the most recent buffer entries (capped at
    /// `max_rows`), in raw reward units.
    pub fn reward_estimate_rmse(&self, max_rows: usize) -> Result<f64> {
        let n = self.buffer.len();
        if n == 0 || max_rows == 0 {
            return Ok(f64::NAN);
        }
        let take = n.min(max_rows);
        let idx: Vec<usize> = (n - take..n).collect();
        let (x, _) = self.batch_inputs(&idx);
        let pred = self.net.forward_mean_field(&x)?;
        let mut sq = 0.0;
        for (r, &i) in idx.iter().enumerate() {
            let est = pred.get(r, 0) * REWARD_SCALE;
            let diff = est - self.buffer.get(i).expected_reward;
            sq += diff * diff;
        }
        Ok((sq / take as f64).sqrt())
    }

    pub fn n_params(&self) -> usize {
        self.net.param_values().iter().map(|t| t.data().len()).sum()
    }
}

/// Hidden widths for a fresh rigid agent, read off a trained adaptive
/// network's decoded architecture: non-final layers keep their decoded size
/// (or declared width when they carry no size posterior); layers decoded as
/// skipped are omitted.
pub fn warmstart_hidden(net: &Network) -> Result<Vec<usize>> {
    let decoded = net.decode();
    let n_layers = decoded.sizes.len();
    let mut hidden = Vec::new();
    for l in 0..n_layers.saturating_sub(1) {
        if decoded.dropped[l] {
            continue;
        }
        match decoded.sizes[l] {
            Some(k) => hidden.push(k),
            None => hidden.push(net.layers[l].spec.out_dim),
        }
    }
    if hidden.is_empty() {
        return Err(Error::InvalidParam("decoded network has no hidden layers left".into()));
    }
    Ok(hidden)
}

// ---------------------------------------------------------------------------
// Run loop
// ---------------------------------------------------------------------------

/// One interaction's log row.
#[derive(Clone, Debug)]
pub struct BanditStepRecord {
    pub step: usize,
    pub context_id: usize,
    pub action: Action,
    pub realized_reward: f64,
    pub regret: f64,
    pub cumulative_regret: f64,
    pub reward_rmse: f64,
    pub divergent_batches: usize,
}

/// Interact for `n_interactions` steps: draw a context, act, realize the
/// reward, store the experience, fine-tune for one buffer epoch, and log
/// regret and the reward-estimate error (evaluated on at most
/// `rmse_max_rows` recent buffer entries).
pub fn run_bandit(
    env: &mut MushroomBandit,
    agent: &mut BanditAgent,
    n_interactions: usize,
    rmse_max_rows: usize,
) -> Result<Vec<BanditStepRecord>> {
    let mut records = Vec::with_capacity(n_interactions);
    let mut cumulative_regret = 0.0;
    for step in 0..n_interactions {
        let idx = env.draw_context();
        let context = env.context_row(idx);
        let action = agent.choose(&context)?;
        let label = env.label(idx);
        let realized = env.realized_reward(idx, action);
        let regret = step_regret(label, action);
        cumulative_regret += regret;
        agent.buffer.push(Experience {
            context: context.data().to_vec(),
            context_id: idx,
            action,
            reward: realized,
            expected_reward: expected_reward(label, action),
        });
        let stats = agent.fine_tune_epoch()?;
        let reward_rmse = agent.reward_estimate_rmse(rmse_max_rows)?;
        records.push(BanditStepRecord {
            step,
            context_id: idx,
            action,
            realized_reward: realized,
            regret,
            cumulative_regret,
            reward_rmse,
            divergent_batches: stats.divergent_batches,
        });
    }
    Ok(records)
}
