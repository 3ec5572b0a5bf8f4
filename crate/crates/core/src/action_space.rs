//! Greedy action selection over discrete and mixed discrete/continuous actions.
//!
//! In mixed mode the network takes the continuous attribute as a sixth input.
//! Each discrete action's value is maximized over that input by projected
//! sign-gradient ascent from several random starts; the step halves whenever
//! the gradient sign flips, so the search settles on kinks of the ReLU surface
//! instead of oscillating around them.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rfmi::INACTION;

/// Number of RFM-I state inputs.
pub const STATE_INPUTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Network input is the state only.
    DiscreteOnly,
    /// Network input is the state plus the continuous action attribute.
    Mixed,
}

impl Mode {
    pub fn input_dim(self) -> usize {
        match self {
            Mode::DiscreteOnly => STATE_INPUTS,
            Mode::Mixed => STATE_INPUTS + 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::DiscreteOnly => "discrete",
            Mode::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "discrete" | "discrete_only" => Ok(Mode::DiscreteOnly),
            "mixed" => Ok(Mode::Mixed),
            other => Err(Error::Config(format!("unknown mode '{other}' (expected discrete or mixed)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Discrete action count and bounds of the continuous attributes (normalized units).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    pub n_discrete: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl ActionSpec {
    /// 11 mailing types plus inaction.
    pub const DEFAULT_DISCRETE: usize = 12;

    pub fn discrete(n_discrete: usize) -> Self {
        Self { n_discrete, bounds: Vec::new() }
    }

    pub fn mixed(n_discrete: usize, lo: f64, hi: f64) -> Self {
        Self { n_discrete, bounds: vec![(lo, hi)] }
    }

    pub fn continuous_dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_discrete == 0 {
            return Err(Error::Config("at least one discrete action is required".into()));
        }
        for &(lo, hi) in &self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("continuous bounds [{lo}, {hi}] must be finite and non-degenerate")));
            }
        }
        Ok(())
    }

    fn bound(&self) -> Result<(f64, f64)> {
        match self.bounds.as_slice() {
            [b] => Ok(*b),
            [] => Err(Error::Config("mixed mode needs bounds for the continuous attribute".into())),
            _ => Err(Error::Config("only one continuous action dimension is supported".into())),
        }
    }
}

impl Default for ActionSpec {
    fn default() -> Self {
        Self::discrete(Self::DEFAULT_DISCRETE)
    }
}

/// Budget of the continuous maximizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContOptConfig {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for ContOptConfig {
    fn default() -> Self {
        Self { restarts: 8, steps: 100, step_size: 0.05, seed: 0 }
    }
}

impl ContOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.steps == 0 || !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("continuous optimizer restarts, steps and step size must be positive".into()));
        }
        Ok(())
    }
}

/// A chosen action. `acont` is in normalized units and is 0 for inaction and in discrete mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedAction {
    pub action: usize,
    pub acont: f64,
    pub q_value: f64,
}

fn check_state(state: &[f64]) -> Result<()> {
    if state.len() != STATE_INPUTS {
        return Err(Error::Shape(format!("state has {} components, expected {STATE_INPUTS}", state.len())));
    }
    Ok(())
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Picks the output neuron with the largest value.
pub fn best_discrete(net: &Mlp, state: &[f64]) -> Result<MixedAction> {
    check_state(state)?;
    if net.input_dim() != STATE_INPUTS {
        return Err(Error::Shape(format!(
            "discrete mode needs a {STATE_INPUTS}-input network, got {}",
            net.input_dim()
        )));
    }
    let q = net.predict(state)?;
    let action = argmax(&q);
    Ok(MixedAction { action, acont: 0.0, q_value: q[action] })
}

fn mixed_input(state: &[f64], acont: f64) -> [f64; STATE_INPUTS + 1] {
    let mut x = [0.0; STATE_INPUTS + 1];
    x[..STATE_INPUTS].copy_from_slice(state);
    x[STATE_INPUTS] = acont;
    x
}

fn check_mixed(net: &Mlp, state: &[f64], spec: &ActionSpec) -> Result<(f64, f64)> {
    check_state(state)?;
    spec.validate()?;
    if net.input_dim() != STATE_INPUTS + 1 {
        return Err(Error::Shape(format!(
            "mixed mode needs a {}-input network, got {}",
            STATE_INPUTS + 1,
            net.input_dim()
        )));
    }
    if net.output_dim() != spec.n_discrete {
        return Err(Error::Shape(format!(
            "network has {} outputs for {} discrete actions",
            net.output_dim(),
            spec.n_discrete
        )));
    }
    spec.bound()
}

/// Ascent stops once the step has shrunk below this fraction of the interval.
const MIN_STEP: f64 = 1e-9;

/// One projected ascent. Returns the best point visited, or `None` if the
/// objective turned non-finite.
fn ascend(
    net: &Mlp,
    state: &[f64],
    action: usize,
    start: f64,
    lo: f64,
    hi: f64,
    cfg: &ContOptConfig,
) -> Option<(f64, f64)> {
    let mut onehot = vec![0.0; net.output_dim()];
    onehot[action] = 1.0;
    let mut x = start.clamp(lo, hi);
    let mut step = cfg.step_size;
    let mut prev_sign = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..cfg.steps {
        let (out, cache) = net.forward(&mixed_input(state, x)).ok()?;
        let q = out[action];
        let g = net.input_gradient(&cache, &onehot).ok()?[STATE_INPUTS];
        if !q.is_finite() || !g.is_finite() {
            return None;
        }
        if best.map_or(true, |(_, bq)| q > bq) {
            best = Some((x, q));
        }
        if g == 0.0 {
            break;
        }
        let sign = g.signum();
        if prev_sign != 0.0 && sign != prev_sign {
            step *= 0.5;
            if step < MIN_STEP * (hi - lo) {
                break;
            }
        }
        prev_sign = sign;
        let next = (x + sign * step).clamp(lo, hi);
        if next == x {
            break;
        }
        x = next;
    }
    // the last move has not been evaluated yet
    let q = net.predict(&mixed_input(state, x)).ok()?[action];
    if !q.is_finite() {
        return None;
    }
    if best.map_or(true, |(_, bq)| q > bq) {
        best = Some((x, q));
    }
    best
}

/// Starting points of the ascents: a uniformly drawn offset advanced by the
/// golden-ratio stride, so each start is uniform on the interval while the set
/// stays evenly spread. The first `k` starts do not depend on `cfg.restarts`.
pub fn restart_points(lo: f64, hi: f64, cfg: &ContOptConfig) -> Vec<f64> {
    const STRIDE: f64 = 0.618_033_988_749_894_9;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offset: f64 = Uniform::new(0.0, 1.0).sample(&mut rng);
    (0..cfg.restarts).map(|i| lo + (hi - lo) * (offset + STRIDE * i as f64).fract()).collect()
}

/// Maximizes one discrete action's value over the continuous attribute with the state held fixed.
///
/// Returns `(acont, q)` with `acont` inside the bounds. Both bound endpoints
/// are always evaluated; on equal values the earliest candidate (first
/// restart, then lower bound, then upper bound) is kept.
pub fn maximize_continuous(
    net: &Mlp,
    state: &[f64],
    action: usize,
    spec: &ActionSpec,
    cfg: &ContOptConfig,
) -> Result<(f64, f64)> {
    let (lo, hi) = check_mixed(net, state, spec)?;
    cfg.validate()?;
    if action == INACTION || action >= spec.n_discrete {
        return Err(Error::Config(format!("action {action} has no continuous attribute to optimize")));
    }
    let mut best: Option<(f64, f64)> = None;
    for start in restart_points(lo, hi, cfg) {
        if let Some((x, q)) = ascend(net, state, action, start, lo, hi, cfg) {
            if best.map_or(true, |(_, bq)| q > bq) {
                best = Some((x, q));
            }
        }
    }
    let (mut bx, mut bq) =
        best.ok_or_else(|| Error::NonFinite(format!("every ascent for action {action} produced non-finite values")))?;
    for x in [lo, hi] {
        let q = net.predict(&mixed_input(state, x))?[action];
        if q > bq {
            (bx, bq) = (x, q);
        }
    }
    Ok((bx, bq))
}

/// Per-action values in mixed mode: inaction at attribute 0, every other
/// action at its maximized attribute.
pub fn mixed_action_values(
    net: &Mlp,
    state: &[f64],
    spec: &ActionSpec,
    cfg: &ContOptConfig,
) -> Result<Vec<MixedAction>> {
    check_mixed(net, state, spec)?;
    let q0 = net.predict(&mixed_input(state, 0.0))?[INACTION];
    let mut out = Vec::with_capacity(spec.n_discrete);
    out.push(MixedAction { action: INACTION, acont: 0.0, q_value: q0 });
    for a in 1..spec.n_discrete {
        let (acont, q_value) = maximize_continuous(net, state, a, spec, cfg)?;
        out.push(MixedAction { action: a, acont, q_value });
    }
    Ok(out)
}

pub fn best_mixed(net: &Mlp, state: &[f64], spec: &ActionSpec, cfg: &ContOptConfig) -> Result<MixedAction> {
    let values = mixed_action_values(net, state, spec, cfg)?;
    let q: Vec<f64> = values.iter().map(|v| v.q_value).collect();
    Ok(values[argmax(&q)])
}

/// Mode, action spec and maximizer budget bundled for greedy selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub mode: Mode,
    pub spec: ActionSpec,
    pub cont: ContOptConfig,
}

impl ActionSpace {
    pub fn discrete(n_discrete: usize) -> Self {
        Self { mode: Mode::DiscreteOnly, spec: ActionSpec::discrete(n_discrete), cont: ContOptConfig::default() }
    }

    pub fn mixed(spec: ActionSpec, cont: ContOptConfig) -> Self {
        Self { mode: Mode::Mixed, spec, cont }
    }

    pub fn input_dim(&self) -> usize {
        self.mode.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.mode == Mode::Mixed {
            self.spec.bound()?;
            self.cont.validate()?;
        }
        Ok(())
    }

    /// Fails unless `net` has the input and output sizes this space expects.
    pub fn check_net(&self, net: &Mlp) -> Result<()> {
        if net.input_dim() != self.input_dim() || net.output_dim() != self.spec.n_discrete {
            return Err(Error::Shape(format!(
                "{} mode with {} actions needs a {}-input, {}-output network; got {} inputs, {} outputs",
                self.mode,
                self.spec.n_discrete,
                self.input_dim(),
                self.spec.n_discrete,
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(())
    }

    /// Builds the network input for a normalized state and attribute.
    pub fn input(&self, state: &[f64], acont: f64) -> Vec<f64> {
        let mut x = state.to_vec();
        if self.mode == Mode::Mixed {
            x.push(acont);
        }
        x
    }

    pub fn best(&self, net: &Mlp, state: &[f64]) -> Result<MixedAction> {
        self.check_net(net)?;
        match self.mode {
            Mode::DiscreteOnly => best_discrete(net, state),
            Mode::Mixed => best_mixed(net, state, &self.spec, &self.cont),
        }
    }

    /// Value of every discrete action (continuous-maximized in mixed mode).
    pub fn values(&self, net: &Mlp, state: &[f64]) -> Result<Vec<MixedAction>> {
        self.check_net(net)?;
        match self.mode {
            Mode::DiscreteOnly => {
                check_state(state)?;
                let q = net.predict(state)?;
                Ok(q.into_iter()
                    .enumerate()
                    .map(|(action, q_value)| MixedAction { action, acont: 0.0, q_value })
                    .collect())
            }
            Mode::Mixed => mixed_action_values(net, state, &self.spec, &self.cont),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{relu_stack, LayerSpec};

    /// Output `action` = offset + relu(a) - 2 relu(a - 1); every other output = `others`.
    fn tent_net(n_out: usize, action: usize, offset: f64, others: f64) -> Mlp {
        let mut net = Mlp::zeros(&[LayerSpec::relu(6, 2), LayerSpec::linear(2, n_out)]).unwrap();
        let w0 = net.weights_mut(0);
        w0[5] = 1.0;
        w0[6 + 5] = 1.0;
        net.biases_mut(0).copy_from_slice(&[0.0, -1.0]);
        let w1 = net.weights_mut(1);
        w1[action * 2] = 1.0;
        w1[action * 2 + 1] = -2.0;
        for (o, b) in net.biases_mut(1).iter_mut().enumerate() {
            *b = if o == action { offset } else { others };
        }
        net
    }

    #[test]
    fn zero_network_picks_inaction() {
        let net = Mlp::zeros(&relu_stack(5, &[4], 12)).unwrap();
        let a = best_discrete(&net, &[0.3; 5]).unwrap();
        assert_eq!((a.action, a.q_value), (0, 0.0));
    }

    #[test]
    fn bias_only_network() {
        let mut net = Mlp::zeros(&relu_stack(5, &[4], 12)).unwrap();
        net.biases_mut(1)[4] = 7.0;
        let a = best_discrete(&net, &[1.0; 5]).unwrap();
        assert_eq!((a.action, a.q_value), (4, 7.0));
    }

    #[test]
    fn discrete_shape_mismatch() {
        let net = Mlp::zeros(&relu_stack(6, &[4], 12)).unwrap();
        assert!(matches!(best_discrete(&net, &[0.0; 5]), Err(Error::Shape(_))));
        let net5 = Mlp::zeros(&relu_stack(5, &[4], 12)).unwrap();
        assert!(matches!(best_discrete(&net5, &[0.0; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn tent_peak_is_found() {
        let net = tent_net(2, 1, 0.0, 0.0);
        let spec = ActionSpec::mixed(2, 0.0, 2.0);
        let (x, q) = maximize_continuous(&net, &[0.0; 5], 1, &spec, &ContOptConfig::default()).unwrap();
        assert!((x - 1.0).abs() < 0.01, "acont {x}");
        assert!((q - 1.0).abs() < 0.01);
    }

    #[test]
    fn flat_objective_keeps_first_start() {
        let mut net = Mlp::new(&relu_stack(6, &[8], 3), 2).unwrap();
        for o in 0..8 {
            net.weights_mut(0)[o * 6 + 5] = 0.0;
        }
        let spec = ActionSpec::mixed(3, -1.0, 1.0);
        let cfg = ContOptConfig::default();
        let state = [0.1, 0.2, -0.3, 0.4, 0.5];
        let (x, q) = maximize_continuous(&net, &state, 2, &spec, &cfg).unwrap();
        assert_eq!(x, restart_points(-1.0, 1.0, &cfg)[0]);
        assert_eq!(q, net.predict(&mixed_input(&state, 0.77)).unwrap()[2]);
    }

    #[test]
    fn inaction_cannot_be_maximized() {
        let net = tent_net(3, 1, 0.0, 0.0);
        let spec = ActionSpec::mixed(3, 0.0, 2.0);
        assert!(maximize_continuous(&net, &[0.0; 5], 0, &spec, &ContOptConfig::default()).is_err());
        assert!(maximize_continuous(&net, &[0.0; 5], 3, &spec, &ContOptConfig::default()).is_err());
    }

    #[test]
    fn mixed_shape_mismatch() {
        let net = Mlp::zeros(&relu_stack(5, &[4], 3)).unwrap();
        let spec = ActionSpec::mixed(3, 0.0, 1.0);
        assert!(matches!(best_mixed(&net, &[0.0; 5], &spec, &ContOptConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_mixed_network() {
        let net = Mlp::zeros(&relu_stack(6, &[4], 12)).unwrap();
        let spec = ActionSpec::mixed(12, -2.0, 2.0);
        let a = best_mixed(&net, &[0.0; 5], &spec, &ContOptConfig::default()).unwrap();
        assert_eq!((a.action, a.q_value), (0, 0.0));
    }

    #[test]
    fn tent_neuron_wins_mixed_selection() {
        let net = tent_net(12, 7, 5.0, 4.5);
        let spec = ActionSpec::mixed(12, 0.0, 2.0);
        let a = best_mixed(&net, &[0.0; 5], &spec, &ContOptConfig::default()).unwrap();
        assert_eq!(a.action, 7);
        assert!((a.acont - 1.0).abs() < 0.01);
        assert_eq!(a.q_value, net.predict(&mixed_input(&[0.0; 5], a.acont)).unwrap()[7]);
    }

    #[test]
    fn action_space_dispatch() {
        let space = ActionSpace::discrete(12);
        let net = Mlp::zeros(&relu_stack(6, &[4], 12)).unwrap();
        assert!(space.best(&net, &[0.0; 5]).is_err());
        let space = ActionSpace::mixed(ActionSpec::mixed(12, 0.0, 2.0), ContOptConfig::default());
        assert_eq!(space.values(&net, &[0.0; 5]).unwrap().len(), 12);
    }
}
