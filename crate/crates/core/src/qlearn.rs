//! Mini-batch deep Q-learning with uniform experience replay and a
//! periodically cloned target network.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::action_space::{ActionSpace, Mode};
use crate::error::{Error, Result};
use crate::model::QModel;
use crate::nn::{relu_stack, LayerSpec, Mlp, RmsProp};
use crate::policy_eval;
use crate::rfmi::{NormStats, TransitionTuple};

/// Hidden layer widths of the Q-network.
pub const HIDDEN_LAYERS: [usize; 2] = [40, 15];

/// Layer chain of the Q-network for `mode` with `n_actions` outputs.
pub fn q_network_layers(mode: Mode, n_actions: usize) -> Vec<LayerSpec> {
    relu_stack(mode.input_dim(), &HIDDEN_LAYERS, n_actions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr0: f64,
    pub lr_decay_per_epoch: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Gradient steps between target-network clones.
    pub target_clone_period: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lr0: 0.001,
            lr_decay_per_epoch: 0.99,
            batch_size: 200,
            epochs: 100,
            target_clone_period: 10_000,
            seed: 0,
            mode: Mode::DiscreteOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0,1), got {}", self.gamma)));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::Config(format!("lr_decay_per_epoch must be in (0,1], got {}", self.lr_decay_per_epoch)));
        }
        if self.batch_size == 0 || self.target_clone_period == 0 {
            return Err(Error::Config("batch_size and target_clone_period must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay_per_epoch.powi(epoch as i32)
    }
}

/// Transition memory sampled uniformly with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    tuples: VecDeque<TransitionTuple>,
    capacity: Option<usize>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(seed: u64) -> Self {
        Self { tuples: VecDeque::new(), capacity: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Oldest entries are evicted once `capacity` is reached.
    pub fn with_capacity(seed: u64, capacity: usize) -> Self {
        Self { capacity: Some(capacity.max(1)), ..Self::new(seed) }
    }

    pub fn from_tuples(tuples: Vec<TransitionTuple>, seed: u64) -> Self {
        Self { tuples: tuples.into(), ..Self::new(seed) }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn push(&mut self, t: TransitionTuple) {
        if let Some(cap) = self.capacity {
            while self.tuples.len() >= cap {
                self.tuples.pop_front();
            }
        }
        self.tuples.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionTuple> {
        self.tuples.iter()
    }

    pub fn sample_index(&mut self) -> usize {
        self.rng.gen_range(0..self.tuples.len())
    }

    pub fn sample(&mut self, n: usize) -> Vec<TransitionTuple> {
        if self.tuples.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let i = self.sample_index();
                self.tuples[i]
            })
            .collect()
    }
}

/// Deep copy used as the frozen target network.
pub fn clone_target(net: &Mlp) -> Mlp {
    net.clone()
}

/// `r + gamma * max_a' Q_target(s', a')` for a normalized tuple.
pub fn bellman_target(
    tuple: &TransitionTuple,
    target_net: &Mlp,
    cfg: &TrainConfig,
    space: &ActionSpace,
) -> Result<f64> {
    if space.mode != cfg.mode {
        return Err(Error::Config(format!("train mode {} does not match action space mode {}", cfg.mode, space.mode)));
    }
    let next = space.best(target_net, &tuple.next_state.to_array())?;
    Ok(tuple.reward + cfg.gamma * next.q_value)
}

/// Mean squared TD error of a normalized batch and its parameter gradient.
///
/// Only the output neuron of the logged action receives an error signal.
pub fn td_gradients(
    batch: &[TransitionTuple],
    net: &Mlp,
    target_net: &Mlp,
    cfg: &TrainConfig,
    space: &ActionSpace,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::data("empty training batch"));
    }
    space.check_net(net)?;
    let n_out = net.output_dim();
    let scale = 2.0 / batch.len() as f64;
    let mut grads = vec![0.0; net.param_count()];
    let mut output_grad = vec![0.0; n_out];
    let mut loss = 0.0;
    for t in batch {
        if t.action >= n_out {
            return Err(Error::data(format!("action {} outside the {n_out}-action space", t.action)));
        }
        let y = bellman_target(t, target_net, cfg, space)?;
        let (out, cache) = net.forward(&space.input(&t.state.to_array(), t.acont))?;
        let err = out[t.action] - y;
        loss += err * err;
        output_grad[t.action] = scale * err;
        net.backward_accumulate(&cache, &output_grad, &mut grads)?;
        output_grad[t.action] = 0.0;
    }
    Ok((loss / batch.len() as f64, grads))
}

/// One RMSProp update on a normalized batch; returns the batch loss before the update.
pub fn td_step(
    batch: &[TransitionTuple],
    net: &mut Mlp,
    target_net: &Mlp,
    opt: &mut RmsProp,
    lr: f64,
    cfg: &TrainConfig,
    space: &ActionSpace,
) -> Result<f64> {
    let (loss, grads) = td_gradients(batch, net, target_net, cfg, space)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, step: 0, loss });
    }
    opt.step(net, &grads, lr).map_err(|e| match e {
        Error::NonFinite(_) => Error::Divergence { epoch: 0, step: 0, loss },
        other => other,
    })?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// `NaN` when no validation transition matched the policy.
    pub val_response_rate: f64,
    pub val_mean_reward: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,loss,val_response_rate,val_mean_reward,lr";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.epoch, r.loss, r.val_response_rate, r.val_mean_reward, r.lr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters with the best validation matched-group mean reward.
    pub best: QModel,
    /// Parameters after the last step.
    pub last: Mlp,
    pub history: TrainHistory,
    pub steps: usize,
}

/// Gradient steps in one epoch over `n` samples.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Trains a Q-network from a fresh seeded initialization.
///
/// `train_set` and `validation_set` hold raw transitions; `norm` maps them to
/// network inputs. After every epoch the greedy policy is evaluated on the
/// validation set and the parameters with the highest matched-group mean
/// reward are kept (later epochs win ties).
pub fn train(
    train_set: &[TransitionTuple],
    validation_set: &[TransitionTuple],
    norm: &NormStats,
    space: &ActionSpace,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    let net = Mlp::new(&q_network_layers(cfg.mode, space.spec.n_discrete), cfg.seed)?;
    train_from(net, train_set, validation_set, norm, space, cfg)
}

/// Like [`train`] but starts from the given network.
pub fn train_from(
    mut net: Mlp,
    train_set: &[TransitionTuple],
    validation_set: &[TransitionTuple],
    norm: &NormStats,
    space: &ActionSpace,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    space.validate()?;
    if space.mode != cfg.mode {
        return Err(Error::Config(format!("train mode {} does not match action space mode {}", cfg.mode, space.mode)));
    }
    space.check_net(&net)?;
    if train_set.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let n_actions = space.spec.n_discrete;
    if let Some(t) = train_set.iter().chain(validation_set).find(|t| t.action >= n_actions) {
        return Err(Error::data(format!("action {} outside the {n_actions}-action space", t.action)));
    }

    let normalized: Vec<TransitionTuple> = train_set.iter().map(|t| norm.apply(t)).collect();
    let mut replay = ReplayBuffer::from_tuples(normalized, cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut opt = RmsProp::for_net(&net);
    let mut target = clone_target(&net);
    let per_epoch = steps_per_epoch(replay.len(), cfg.batch_size);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Mlp)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for _ in 0..per_epoch {
            if step > 0 && step % cfg.target_clone_period == 0 {
                target = clone_target(&net);
            }
            let batch = replay.sample(cfg.batch_size);
            let loss = td_step(&batch, &mut net, &target, &mut opt, lr, cfg, space).map_err(|e| match e {
                Error::Divergence { loss, .. } => Error::Divergence { epoch, step, loss },
                other => other,
            })?;
            loss_sum += loss;
            step += 1;
        }

        let (rate, mean) = if validation_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let model = QModel { net: net.clone(), norm: norm.clone(), space: space.clone() };
            let report = policy_eval::evaluate(validation_set, &model, cfg.seed)?;
            (report.matched.response_rate().unwrap_or(f64::NAN), report.matched.mean_reward().unwrap_or(f64::NAN))
        };
        if !mean.is_nan() && best.as_ref().map_or(true, |(b, _)| mean >= *b) {
            best = Some((mean, net.clone()));
        }
        history.records.push(EpochRecord {
            epoch,
            loss: loss_sum / per_epoch as f64,
            val_response_rate: rate,
            val_mean_reward: mean,
            lr,
        });
    }

    let best_net = best.map(|(_, n)| n).unwrap_or_else(|| net.clone());
    Ok(TrainOutput {
        best: QModel { net: best_net, norm: norm.clone(), space: space.clone() },
        last: net,
        history,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfmi::RfmiState;

    fn tuple(state: [f64; 5], action: usize, next: [f64; 5], reward: f64) -> TransitionTuple {
        TransitionTuple::new(RfmiState::from_array(state), action, 0.0, RfmiState::from_array(next), reward)
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.gamma, c.lr0, c.lr_decay_per_epoch), (0.9, 0.001, 0.99));
        assert_eq!((c.batch_size, c.epochs, c.target_clone_period), (200, 100, 10_000));
    }

    #[test]
    fn myopic_target_is_reward() {
        let net = Mlp::new(&q_network_layers(Mode::DiscreteOnly, 12), 1).unwrap();
        let cfg = TrainConfig { gamma: 0.0, ..TrainConfig::default() };
        let t = tuple([0.1, 0.2, 0.3, 0.4, 0.5], 3, [1.0, -1.0, 2.0, 0.0, 0.3], 7.25);
        assert_eq!(bellman_target(&t, &net, &cfg, &ActionSpace::discrete(12)).unwrap(), 7.25);
    }

    #[test]
    fn zero_target_network() {
        let net = Mlp::zeros(&q_network_layers(Mode::DiscreteOnly, 12)).unwrap();
        let t = tuple([0.0; 5], 1, [1.0; 5], 5.0);
        assert_eq!(bellman_target(&t, &net, &TrainConfig::default(), &ActionSpace::discrete(12)).unwrap(), 5.0);
    }

    #[test]
    fn mode_mismatch() {
        let net = Mlp::zeros(&q_network_layers(Mode::DiscreteOnly, 12)).unwrap();
        let cfg = TrainConfig { mode: Mode::Mixed, ..TrainConfig::default() };
        let t = tuple([0.0; 5], 1, [1.0; 5], 5.0);
        assert!(bellman_target(&t, &net, &cfg, &ActionSpace::discrete(12)).is_err());
    }

    #[test]
    fn hand_differentiated_scalar_loss() {
        // Q = w * s with s = [1, 0, 0, 0, 0], w = 0, y = 1
        let net = Mlp::zeros(&[LayerSpec::linear(5, 1)]).unwrap();
        let target = Mlp::zeros(&[LayerSpec::linear(5, 1)]).unwrap();
        let cfg = TrainConfig { gamma: 0.0, ..TrainConfig::default() };
        let t = tuple([1.0, 0.0, 0.0, 0.0, 0.0], 0, [0.0; 5], 1.0);
        let (loss, g) = td_gradients(&[t], &net, &target, &cfg, &ActionSpace::discrete(1)).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g[0], -2.0);
        assert_eq!(&g[1..5], &[0.0; 4]);
        assert_eq!(g[5], -2.0);
    }

    #[test]
    fn fixed_point_batch_leaves_network_unchanged() {
        // reward equals the current Q of the logged action and gamma = 0
        let mut net = Mlp::new(&q_network_layers(Mode::DiscreteOnly, 3), 4).unwrap();
        let target = net.clone();
        let cfg = TrainConfig { gamma: 0.0, ..TrainConfig::default() };
        let space = ActionSpace::discrete(3);
        let states = [[0.5, 0.1, 0.0, 1.0, 2.0], [1.0, 1.0, 1.0, 1.0, 1.0]];
        let batch: Vec<_> =
            states.iter().enumerate().map(|(i, s)| tuple(*s, i, [0.0; 5], net.predict(s).unwrap()[i])).collect();
        let before = net.clone();
        let mut opt = RmsProp::for_net(&net);
        let loss = td_step(&batch, &mut net, &target, &mut opt, 0.01, &cfg, &space).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn other_output_rows_get_no_gradient() {
        let net = Mlp::new(&q_network_layers(Mode::DiscreteOnly, 12), 9).unwrap();
        let target = net.clone();
        let t = tuple([0.3, -0.2, 1.0, 0.5, -1.0], 5, [0.0, 0.1, 0.2, 0.3, 0.4], 3.0);
        let (_, g) = td_gradients(&[t], &net, &target, &TrainConfig::default(), &ActionSpace::discrete(12)).unwrap();
        let last = net.layers().len() - 1;
        let off = net.layer_offset(last);
        let spec = net.layers()[last];
        for o in 0..12 {
            let row = &g[off + o * spec.input_dim..off + (o + 1) * spec.input_dim];
            let bias = g[off + spec.input_dim * spec.output_dim + o];
            if o == 5 {
                assert!(bias != 0.0);
            } else {
                assert!(row.iter().all(|&v| v == 0.0) && bias == 0.0, "row {o}");
            }
        }
    }

    #[test]
    fn empty_batch_and_bad_action() {
        let mut net = Mlp::zeros(&q_network_layers(Mode::DiscreteOnly, 2)).unwrap();
        let target = net.clone();
        let mut opt = RmsProp::for_net(&net);
        let cfg = TrainConfig::default();
        let space = ActionSpace::discrete(2);
        assert!(td_step(&[], &mut net, &target, &mut opt, 0.1, &cfg, &space).is_err());
        let t = tuple([0.0; 5], 2, [0.0; 5], 1.0);
        assert!(td_step(&[t], &mut net, &target, &mut opt, 0.1, &cfg, &space).is_err());
    }

    #[test]
    fn exploding_updates_surface_as_divergence() {
        let mut net = Mlp::new(&q_network_layers(Mode::DiscreteOnly, 2), 0).unwrap();
        let target = net.clone();
        let mut opt = RmsProp::for_net(&net);
        let cfg = TrainConfig { gamma: 0.0, ..TrainConfig::default() };
        let t = tuple([1.0; 5], 1, [0.0; 5], f64::MAX);
        let err = td_step(&[t], &mut net, &target, &mut opt, 0.1, &cfg, &ActionSpace::discrete(2)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn replay_capacity_evicts_oldest() {
        let mut rb = ReplayBuffer::with_capacity(1, 3);
        for r in 0..5 {
            rb.push(tuple([0.0; 5], 0, [0.0; 5], r as f64));
        }
        let rewards: Vec<f64> = rb.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.001);
        assert!((c.lr_at(2) - 0.001 * 0.99 * 0.99).abs() < 1e-18);
    }

    #[test]
    fn clone_is_isolated() {
        let mut net = Mlp::new(&q_network_layers(Mode::DiscreteOnly, 12), 2).unwrap();
        let probe = [0.4, 0.3, -0.2, 0.1, 0.9];
        let target = clone_target(&net);
        let before = target.predict(&probe).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p += 0.5);
        assert_eq!(target.predict(&probe).unwrap(), before);
        assert_ne!(net.predict(&probe).unwrap(), before);
    }
}
