//! Synthetic donor population and the autonomous exploration/training loop.
//!
//! Response probability of a customer in state `s` receiving action `a`:
//!
//! ```text
//! score = logit(base_rate) + action_effects[a]
//!       - fatigue_coeff * i_frequency
//!       - recency_decay * recency * [frequency > 2]
//!       + thankyou_boost * [a == thankyou_action and recency <= 1]
//! p     = clamp(sigmoid(score), 0.001, 0.999)
//! ```
//!
//! A responder donates `amount_mean * U(0.5, 1.5)`. After `window` periods a
//! simulated customer starts over from its initial state, which keeps the
//! population's state distribution stationary over long runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::action_space::{argmax, ActionSpace, Mode};
use crate::error::{Error, Result};
use crate::model::QModel;
use crate::nn::{Mlp, RmsProp};
use crate::qlearn::{clone_target, q_network_layers, td_step, ReplayBuffer, TrainConfig};
use crate::rfmi::{NormStats, RfmiState, StateDim, TransitionTuple, INACTION};

pub const MIN_RESPONSE: f64 = 0.001;
pub const MAX_RESPONSE: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct DonorModel {
    pub base_rate: f64,
    /// Log-odds shift of each action; the length fixes the number of actions.
    pub action_effects: Vec<f64>,
    pub fatigue_coeff: f64,
    pub recency_decay: f64,
    pub thankyou_action: usize,
    pub thankyou_boost: f64,
    pub amount_mean: f64,
    /// Periods a customer is followed before restarting from its initial state.
    pub window: usize,
    pub seed: u64,
}

impl Default for DonorModel {
    fn default() -> Self {
        Self {
            base_rate: 0.08,
            action_effects: vec![0.0, 0.2, 0.4, 0.1, 1.2, 0.3, -0.2, 0.5, 0.2, 0.3, -0.4, 0.6],
            fatigue_coeff: 0.04,
            recency_decay: 0.08,
            thankyou_action: 7,
            thankyou_boost: 1.5,
            amount_mean: 15.0,
            window: 23,
            seed: 0,
        }
    }
}

impl DonorModel {
    /// A population where action `dominant` is better than every other action in every state.
    pub fn dominant(n_actions: usize, dominant: usize) -> Self {
        let mut effects = vec![0.0; n_actions];
        effects[dominant] = 2.0;
        Self {
            base_rate: 0.05,
            action_effects: effects,
            fatigue_coeff: 0.0,
            recency_decay: 0.0,
            thankyou_action: dominant,
            thankyou_boost: 0.0,
            ..Self::default()
        }
    }

    pub fn n_actions(&self) -> usize {
        self.action_effects.len()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.base_rate, self.fatigue_coeff, self.recency_decay, self.thankyou_boost, self.amount_mean]
            .iter()
            .chain(&self.action_effects)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("donor model coefficients must be finite".into()));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::Config(format!("base_rate must be in (0,1), got {}", self.base_rate)));
        }
        if self.action_effects.is_empty() || self.thankyou_action >= self.action_effects.len() {
            return Err(Error::Config("action_effects must cover the thank-you action".into()));
        }
        if self.amount_mean < 0.0 || self.window == 0 {
            return Err(Error::Config("amount_mean must be non-negative and window positive".into()));
        }
        Ok(())
    }

    pub fn response_probability(&self, state: &RfmiState, action: usize) -> f64 {
        let logit = (self.base_rate / (1.0 - self.base_rate)).ln();
        let mut score = logit + self.action_effects[action] - self.fatigue_coeff * state.i_frequency;
        if state.frequency > 2.0 {
            score -= self.recency_decay * state.recency;
        }
        if action == self.thankyou_action && state.recency <= 1.0 {
            score += self.thankyou_boost;
        }
        (1.0 / (1.0 + (-score).exp())).clamp(MIN_RESPONSE, MAX_RESPONSE)
    }

    /// Initial states from a few periods of random contact history.
    pub fn sample_population(&self, n: usize, seed: u64) -> Vec<RfmiState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut s = RfmiState::default();
                for _ in 0..rng.gen_range(1..=6) {
                    let a = rng.gen_range(0..self.n_actions());
                    s = self.step_unchecked(&s, a, &mut rng).1;
                }
                s
            })
            .collect()
    }

    fn step_unchecked<R: Rng>(&self, state: &RfmiState, action: usize, rng: &mut R) -> (f64, RfmiState) {
        let p = self.response_probability(state, action);
        let responded = rng.gen::<f64>() < p;
        let reward = if responded { self.amount_mean * rng.gen_range(0.5..1.5) } else { 0.0 };
        (reward, state.advance(reward, action))
    }
}

/// Simulates one period for one customer. `acont` is accepted for interface
/// symmetry; the synthetic dynamics do not depend on it.
pub fn env_step<R: Rng>(
    model: &DonorModel,
    state: &RfmiState,
    action: usize,
    _acont: f64,
    rng: &mut R,
) -> Result<(f64, RfmiState)> {
    if action >= model.n_actions() {
        return Err(Error::Config(format!("action {action} outside the {}-action model", model.n_actions())));
    }
    Ok(model.step_unchecked(state, action, rng))
}

/// Allows `action` only while a state dimension lies within `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionConstraint {
    pub action: usize,
    pub dim: StateDim,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl ActionConstraint {
    pub fn allows(&self, action: usize, state: &RfmiState) -> bool {
        if action != self.action {
            return true;
        }
        let v = state.get(self.dim);
        self.min.map_or(true, |m| v >= m) && self.max.map_or(true, |m| v <= m)
    }
}

impl std::fmt::Display for ActionConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if let Some(m) = self.min {
            parts.push(format!("{}>={m}", self.dim.name()));
        }
        if let Some(m) = self.max {
            parts.push(format!("{}<={m}", self.dim.name()));
        }
        write!(f, "{}:{}", self.action, parts.join("&"))
    }
}

impl std::str::FromStr for ActionConstraint {
    type Err = Error;

    /// Parses `ACTION:DIM<=X`, `ACTION:DIM>=X`, or both joined by `&`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid constraint '{s}' (expected e.g. 7:recency<=1)"));
        let (action, conds) = s.split_once(':').ok_or_else(bad)?;
        let action: usize = action.trim().parse().map_err(|_| bad())?;
        if action == INACTION {
            return Err(Error::Config("inaction cannot be constrained".into()));
        }
        let mut c = ActionConstraint { action, dim: StateDim::Recency, min: None, max: None };
        let mut dim: Option<StateDim> = None;
        for cond in conds.split('&') {
            let (d, v, is_max) = if let Some((d, v)) = cond.split_once("<=") {
                (d, v, true)
            } else if let Some((d, v)) = cond.split_once(">=") {
                (d, v, false)
            } else {
                return Err(bad());
            };
            let d: StateDim = d.parse()?;
            if dim.is_some_and(|prev| prev != d) {
                return Err(Error::Config(format!("constraint '{s}' mixes dimensions")));
            }
            dim = Some(d);
            let v: f64 = v.trim().parse().map_err(|_| bad())?;
            if is_max {
                c.max = Some(v);
            } else {
                c.min = Some(v);
            }
        }
        c.dim = dim.ok_or_else(bad)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub epsilon0: f64,
    pub epsilon_floor: f64,
    pub epsilon_decay: f64,
    pub episodes: usize,
    /// Episodes between training bursts.
    pub train_every: usize,
    /// Gradient steps per burst.
    pub steps_per_burst: usize,
    pub replay_capacity: usize,
    pub constraints: Vec<ActionConstraint>,
    /// Actions whose logged mean reward falls below this are removed from consideration.
    pub drop_threshold: Option<f64>,
    /// Logged samples an action needs before it can be dropped.
    pub drop_min_samples: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            epsilon0: 1.0,
            epsilon_floor: 0.05,
            epsilon_decay: 0.995,
            episodes: 300,
            train_every: 2,
            steps_per_burst: 250,
            replay_capacity: 1_000_000,
            constraints: Vec::new(),
            drop_threshold: None,
            drop_min_samples: 500,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.epsilon0) || !prob(self.epsilon_floor) || self.epsilon_floor > self.epsilon0 {
            return Err(Error::Config("need 0 <= epsilon_floor <= epsilon0 <= 1".into()));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::Config("epsilon_decay must be in (0,1]".into()));
        }
        if self.train_every == 0 || self.replay_capacity == 0 {
            return Err(Error::Config("train_every and replay_capacity must be positive".into()));
        }
        Ok(())
    }

    /// Exploration probability in episode `e` (0-based).
    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.epsilon0 * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_floor)
    }

    fn allowed(&self, action: usize, state: &RfmiState, dropped: &[bool]) -> bool {
        !dropped[action] && self.constraints.iter().all(|c| c.allows(action, state))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub response_rate: f64,
    pub replay_size: usize,
}

pub const EPISODE_CSV_HEADER: &str = "episode,epsilon,mean_reward,response_rate,replay_size";

pub fn write_episode_csv<W: std::io::Write>(mut w: W, history: &[EpisodeRecord]) -> Result<()> {
    writeln!(w, "{EPISODE_CSV_HEADER}")?;
    for r in history {
        writeln!(w, "{},{},{},{},{}", r.episode, r.epsilon, r.mean_reward, r.response_rate, r.replay_size)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AutonomyOutput {
    pub model: QModel,
    pub history: Vec<EpisodeRecord>,
    pub replay_size: usize,
    /// Number of times training diverged and the network was re-initialized.
    pub reinitializations: usize,
    pub dropped_actions: Vec<usize>,
    /// Logged transitions whose action broke a constraint, audited after selection.
    pub constraint_violations: usize,
}

/// Caller-supplied behavior used instead of uniform exploration until the first training burst.
pub type InitialPolicy<'a> = &'a (dyn Fn(&RfmiState) -> usize + Sync);

/// Runs the cold-start control loop with uniform initial exploration.
pub fn run_autonomous(
    population: &[RfmiState],
    model: &DonorModel,
    agent: &AgentConfig,
    train: &TrainConfig,
) -> Result<AutonomyOutput> {
    run_autonomous_with(population, model, agent, train, None)
}

/// Runs the cold-start control loop.
///
/// Each episode every customer receives one action: with probability epsilon a
/// uniformly random allowed action, otherwise the greedy allowed action of the
/// current network. Every `train_every` episodes the network takes
/// `steps_per_burst` TD steps on mini-batches from the replay memory.
/// Input normalization is fitted on the replay memory at the first burst and
/// frozen afterwards.
pub fn run_autonomous_with(
    population: &[RfmiState],
    model: &DonorModel,
    agent: &AgentConfig,
    train: &TrainConfig,
    initial_policy: Option<InitialPolicy<'_>>,
) -> Result<AutonomyOutput> {
    if population.is_empty() {
        return Err(Error::Config("population must contain at least one customer".into()));
    }
    model.validate()?;
    agent.validate()?;
    train.validate()?;
    if train.mode != Mode::DiscreteOnly {
        return Err(Error::Config("the autonomous loop supports the discrete action mode only".into()));
    }
    for s in population {
        s.validate()?;
    }
    let n_actions = model.n_actions();
    let space = ActionSpace::discrete(n_actions);
    let layers = q_network_layers(Mode::DiscreteOnly, n_actions);

    let mut env_rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(agent.seed);
    let mut net_seed = train.seed;
    let mut net = Mlp::new(&layers, net_seed)?;
    let mut opt = RmsProp::for_net(&net);
    let mut target = clone_target(&net);
    let mut norm = NormStats::identity();
    let mut replay = ReplayBuffer::with_capacity(train.seed ^ 0x9E37_79B9_7F4A_7C15, agent.replay_capacity);

    let mut states = population.to_vec();
    let mut ages: Vec<usize> = (0..population.len()).map(|i| i % model.window).collect();
    let mut dropped = vec![false; n_actions];
    let mut history = Vec::with_capacity(agent.episodes);
    let mut bursts = 0usize;
    let mut total_steps = 0usize;
    let mut reinitializations = 0usize;
    let mut violations = 0usize;

    for episode in 0..agent.episodes {
        let epsilon = agent.epsilon(episode);

        // exploration draws are sequential so the run does not depend on thread count
        let explore: Vec<Option<usize>> = states
            .iter()
            .map(|s| {
                if agent_rng.gen::<f64>() >= epsilon {
                    return None;
                }
                let allowed: Vec<usize> = (0..n_actions).filter(|&a| agent.allowed(a, s, &dropped)).collect();
                let random = allowed[agent_rng.gen_range(0..allowed.len())];
                Some(match initial_policy {
                    Some(f) if bursts == 0 => {
                        let a = f(s);
                        if a < n_actions && agent.allowed(a, s, &dropped) {
                            a
                        } else {
                            random
                        }
                    }
                    _ => random,
                })
            })
            .collect();
        let actions: Vec<usize> = states
            .par_iter()
            .zip(&explore)
            .map(|(s, e)| match e {
                Some(a) => Ok(*a),
                None => {
                    let q = net.predict(&norm.state(s))?;
                    let masked: Vec<f64> = q
                        .iter()
                        .enumerate()
                        .map(|(a, &v)| if agent.allowed(a, s, &dropped) { v } else { f64::NEG_INFINITY })
                        .collect();
                    Ok(argmax(&masked))
                }
            })
            .collect::<Result<_>>()?;

        let mut reward_sum = 0.0;
        let mut responders = 0usize;
        for (i, &a) in actions.iter().enumerate() {
            if !agent.constraints.iter().all(|c| c.allows(a, &states[i])) {
                violations += 1;
            }
            let (reward, next) = env_step(model, &states[i], a, 0.0, &mut env_rng)?;
            replay.push(TransitionTuple::new(states[i], a, 0.0, next, reward));
            reward_sum += reward;
            if reward > 0.0 {
                responders += 1;
            }
            ages[i] += 1;
            if ages[i] >= model.window {
                ages[i] = 0;
                states[i] = population[i];
            } else {
                states[i] = next;
            }
        }
        let n = states.len() as f64;
        history.push(EpisodeRecord {
            episode,
            epsilon,
            mean_reward: reward_sum / n,
            response_rate: responders as f64 / n,
            replay_size: replay.len(),
        });

        if (episode + 1) % agent.train_every == 0 && agent.steps_per_burst > 0 {
            if bursts == 0 {
                let logged: Vec<TransitionTuple> = replay.iter().copied().collect();
                norm = NormStats::fit(&logged)?;
            }
            let lr = train.lr_at(bursts);
            for _ in 0..agent.steps_per_burst {
                if total_steps > 0 && total_steps % train.target_clone_period == 0 {
                    target = clone_target(&net);
                }
                let batch: Vec<TransitionTuple> =
                    replay.sample(train.batch_size).iter().map(|t| norm.apply(t)).collect();
                match td_step(&batch, &mut net, &target, &mut opt, lr, train, &space) {
                    Ok(_) => total_steps += 1,
                    Err(Error::Divergence { .. }) => {
                        reinitializations += 1;
                        net_seed = net_seed.wrapping_add(1);
                        net = Mlp::new(&layers, net_seed)?;
                        opt = RmsProp::for_net(&net);
                        target = clone_target(&net);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            bursts += 1;
            if let Some(threshold) = agent.drop_threshold {
                update_dropped(&replay, n_actions, threshold, agent.drop_min_samples, &mut dropped);
            }
        }
    }

    let dropped_actions = dropped.iter().enumerate().filter(|(_, &d)| d).map(|(a, _)| a).collect();
    Ok(AutonomyOutput {
        model: QModel::new(net, norm, space)?,
        history,
        replay_size: replay.len(),
        reinitializations,
        dropped_actions,
        constraint_violations: violations,
    })
}

fn update_dropped(replay: &ReplayBuffer, n_actions: usize, threshold: f64, min_samples: usize, dropped: &mut [bool]) {
    let mut sums = vec![(0usize, 0.0); n_actions];
    for t in replay.iter() {
        sums[t.action].0 += 1;
        sums[t.action].1 += t.reward;
    }
    for (a, &(n, sum)) in sums.iter().enumerate().skip(1) {
        if n >= min_samples.max(1) && sum / (n as f64) < threshold {
            dropped[a] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfmi::{compute_state, Contact, CustomerTimeline};

    #[test]
    fn floor_response_rate() {
        let model = DonorModel {
            base_rate: 0.001,
            action_effects: vec![0.0; 12],
            thankyou_boost: 0.0,
            ..DonorModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = RfmiState::new(1.0, 0.0, 0.0, 1.0, 0.0);
        let responses = (0..100_000).filter(|i| env_step(&model, &s, i % 12, 0.0, &mut rng).unwrap().0 > 0.0).count();
        assert!(responses as f64 / 100_000.0 <= 0.01);
    }

    #[test]
    fn fatigue_lowers_response() {
        let model = DonorModel::default();
        let rate = |ifreq: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let s = RfmiState::new(3.0, 1.0, 10.0, 1.0, ifreq);
            (0..100_000).filter(|_| env_step(&model, &s, 4, 0.0, &mut rng).unwrap().0 > 0.0).count()
        };
        assert!(rate(10.0) < rate(0.0));
    }

    #[test]
    fn next_state_matches_timeline_bookkeeping() {
        let model = DonorModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut timeline = CustomerTimeline::new(
            "c",
            vec![0.0, 12.0, 0.0, 7.5],
            vec![Some(Contact { action: 4, acont: 1.0 }), None, Some(Contact { action: 7, acont: 2.0 }), None],
        )
        .unwrap();
        for step in 0..40 {
            let p = timeline.periods();
            let s = compute_state(&timeline, p).unwrap();
            let action = (step * 5) % 12;
            let (reward, next) = env_step(&model, &s, action, 0.0, &mut rng).unwrap();
            timeline.push(reward, Some(Contact { action, acont: 0.0 })).unwrap();
            assert_eq!(next, compute_state(&timeline, p + 1).unwrap());
        }
    }

    #[test]
    fn invalid_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(env_step(&DonorModel::default(), &RfmiState::default(), 12, 0.0, &mut rng).is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let agent = AgentConfig::default();
        assert_eq!(agent.epsilon(0), 1.0);
        assert_eq!(agent.epsilon(10), 0.995f64.powi(10));
        assert_eq!(agent.epsilon(5000), 0.05);
    }

    #[test]
    fn constraint_parsing() {
        let c: ActionConstraint = "7:recency<=1".parse().unwrap();
        assert_eq!(c, ActionConstraint { action: 7, dim: StateDim::Recency, min: None, max: Some(1.0) });
        assert!(c.allows(7, &RfmiState::new(1.0, 0.0, 0.0, 0.0, 0.0)));
        assert!(!c.allows(7, &RfmiState::new(2.0, 0.0, 0.0, 0.0, 0.0)));
        assert!(c.allows(3, &RfmiState::new(9.0, 0.0, 0.0, 0.0, 0.0)));
        let both: ActionConstraint = "2:frequency>=1&frequency<=4".parse().unwrap();
        assert_eq!(both.to_string().parse::<ActionConstraint>().unwrap(), both);
        assert!("0:recency<=1".parse::<ActionConstraint>().is_err());
        assert!("7-recency".parse::<ActionConstraint>().is_err());
    }

    #[test]
    fn dropping_underperformers() {
        let mut rb = ReplayBuffer::new(0);
        for i in 0..30 {
            let r = if i % 3 == 1 { 0.0 } else { 5.0 };
            rb.push(TransitionTuple::new(RfmiState::default(), i % 3, 0.0, RfmiState::default(), r));
        }
        let mut dropped = vec![false; 3];
        update_dropped(&rb, 3, 1.0, 5, &mut dropped);
        assert_eq!(dropped, vec![false, true, false]);
    }
}
