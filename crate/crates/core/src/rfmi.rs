//! RFM-I customer states and transition tuples.
//!
//! A state summarizes the periods strictly before the current one:
//! recency and frequency of transactions, their mean amount, and recency and
//! frequency of marketing contacts. Transactions and contacts are counted at
//! the end of their period, so a donation in period `p - 1` gives recency 1 at
//! period `p`. With no history, recency counts the periods elapsed.

use crate::error::{Error, Result};

/// Action index reserved for "no contact".
pub const INACTION: usize = 0;

/// Names of the five state dimensions, in vector order.
pub const STATE_DIMS: [&str; 5] = ["recency", "frequency", "monetary", "i_recency", "i_frequency"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateDim {
    Recency,
    Frequency,
    Monetary,
    IRecency,
    IFrequency,
}

impl StateDim {
    pub const ALL: [StateDim; 5] =
        [StateDim::Recency, StateDim::Frequency, StateDim::Monetary, StateDim::IRecency, StateDim::IFrequency];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        STATE_DIMS[self.index()]
    }
}

impl std::str::FromStr for StateDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "recency" | "r" => StateDim::Recency,
            "frequency" | "f" => StateDim::Frequency,
            "monetary" | "m" => StateDim::Monetary,
            "i_recency" | "irecency" | "ir" => StateDim::IRecency,
            "i_frequency" | "ifrequency" | "if" => StateDim::IFrequency,
            other => return Err(Error::Config(format!("unknown state dimension '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RfmiState {
    /// Periods since the last transaction.
    pub recency: f64,
    /// Transactions so far.
    pub frequency: f64,
    /// Mean transaction amount so far; zero without transactions.
    pub monetary: f64,
    /// Periods since the last non-inaction contact.
    pub i_recency: f64,
    /// Non-inaction contacts so far.
    pub i_frequency: f64,
}

impl RfmiState {
    pub fn new(recency: f64, frequency: f64, monetary: f64, i_recency: f64, i_frequency: f64) -> Self {
        Self { recency, frequency, monetary, i_recency, i_frequency }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.recency, self.frequency, self.monetary, self.i_recency, self.i_frequency]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn get(&self, dim: StateDim) -> f64 {
        self.to_array()[dim.index()]
    }

    pub fn set(&mut self, dim: StateDim, value: f64) {
        let mut v = self.to_array();
        v[dim.index()] = value;
        *self = Self::from_array(v);
    }

    /// The state one period later, after a transaction of `amount` (0 for none)
    /// and a contact with `action` during the current period.
    pub fn advance(&self, amount: f64, action: usize) -> Self {
        let mut next = *self;
        if amount > 0.0 {
            next.recency = 1.0;
            next.frequency = self.frequency + 1.0;
            next.monetary = (self.monetary * self.frequency + amount) / next.frequency;
        } else {
            next.recency = self.recency + 1.0;
        }
        if action != INACTION {
            next.i_recency = 1.0;
            next.i_frequency = self.i_frequency + 1.0;
        } else {
            next.i_recency = self.i_recency + 1.0;
        }
        next
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let v = self.to_array();
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::data(format!("state components must be finite and non-negative: {v:?}")));
        }
        Ok(())
    }
}

/// A marketing contact: discrete action type plus its continuous attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub action: usize,
    pub acont: f64,
}

/// Per-period transactions and contacts of one customer.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerTimeline {
    customer_id: String,
    amounts: Vec<f64>,
    contacts: Vec<Option<Contact>>,
}

impl CustomerTimeline {
    /// Contacts with action 0 are stored as inaction (`None`).
    pub fn new(customer_id: impl Into<String>, amounts: Vec<f64>, contacts: Vec<Option<Contact>>) -> Result<Self> {
        if amounts.len() != contacts.len() {
            return Err(Error::data(format!(
                "timeline has {} amounts but {} contact slots",
                amounts.len(),
                contacts.len()
            )));
        }
        if let Some(a) = amounts.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(Error::data(format!("transaction amount {a} is negative or non-finite")));
        }
        if contacts.iter().flatten().any(|c| !c.acont.is_finite()) {
            return Err(Error::data("continuous action attribute must be finite"));
        }
        let contacts = contacts.into_iter().map(|c| c.filter(|c| c.action != INACTION)).collect();
        Ok(Self { customer_id: customer_id.into(), amounts, contacts })
    }

    /// A timeline with no transactions and no contacts.
    pub fn empty(customer_id: impl Into<String>, periods: usize) -> Self {
        Self { customer_id: customer_id.into(), amounts: vec![0.0; periods], contacts: vec![None; periods] }
    }

    pub fn customer_id(&self) -> &str {
        &self.customer_id
    }

    pub fn periods(&self) -> usize {
        self.amounts.len()
    }

    pub fn amounts(&self) -> &[f64] {
        &self.amounts
    }

    pub fn contacts(&self) -> &[Option<Contact>] {
        &self.contacts
    }

    /// Appends one period.
    pub fn push(&mut self, amount: f64, contact: Option<Contact>) -> Result<()> {
        if !amount.is_finite() || amount < 0.0 {
            return Err(Error::data(format!("transaction amount {amount} is negative or non-finite")));
        }
        self.amounts.push(amount);
        self.contacts.push(contact.filter(|c| c.action != INACTION));
        Ok(())
    }

    fn action_at(&self, period: usize) -> (usize, f64) {
        match self.contacts[period] {
            Some(c) => (c.action, c.acont),
            None => (INACTION, 0.0),
        }
    }
}

/// State at the start of period `period_index`, built from periods `0..period_index` only.
pub fn compute_state(timeline: &CustomerTimeline, period_index: usize) -> Result<RfmiState> {
    if period_index > timeline.periods() {
        return Err(Error::data(format!(
            "period index {period_index} beyond timeline of {} periods",
            timeline.periods()
        )));
    }
    Ok((0..period_index).fold(RfmiState::default(), |s, p| s.advance(timeline.amounts[p], timeline.action_at(p).0)))
}

/// One logged step: state, action taken, reward observed, next state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionTuple {
    pub state: RfmiState,
    pub action: usize,
    pub acont: f64,
    pub next_state: RfmiState,
    pub reward: f64,
}

impl TransitionTuple {
    pub fn new(state: RfmiState, action: usize, acont: f64, next_state: RfmiState, reward: f64) -> Self {
        Self { state, action, acont, next_state, reward }
    }

    /// Field order of the transition CSV.
    pub fn to_record(&self) -> [f64; 13] {
        let s = self.state.to_array();
        let n = self.next_state.to_array();
        [s[0], s[1], s[2], s[3], s[4], self.action as f64, self.acont, n[0], n[1], n[2], n[3], n[4], self.reward]
    }

    pub fn is_inaction(&self) -> bool {
        self.action == INACTION
    }
}

/// Splits a timeline into `periods - 1` consecutive transitions.
pub fn build_transitions(timeline: &CustomerTimeline) -> Result<Vec<TransitionTuple>> {
    let periods = timeline.periods();
    if periods < 2 {
        return Err(Error::data(format!(
            "customer {} has {periods} periods; at least 2 are needed",
            timeline.customer_id
        )));
    }
    let mut out = Vec::with_capacity(periods - 1);
    let mut state = RfmiState::default();
    for t in 0..periods - 1 {
        let (action, acont) = timeline.action_at(t);
        let reward = timeline.amounts[t];
        let next = state.advance(reward, action);
        out.push(TransitionTuple { state, action, acont, next_state: next, reward });
        state = next;
    }
    Ok(out)
}

/// Affine map applied to network inputs: per-dimension standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub state_mean: [f64; 5],
    pub state_scale: [f64; 5],
    pub acont_mean: f64,
    pub acont_scale: f64,
    /// Medians of the raw states, used as reference points for value curves.
    pub state_median: [f64; 5],
}

impl NormStats {
    /// The identity map.
    pub fn identity() -> Self {
        Self { state_mean: [0.0; 5], state_scale: [1.0; 5], acont_mean: 0.0, acont_scale: 1.0, state_median: [0.0; 5] }
    }

    /// Fits the map to the `state` column and the non-inaction `acont` values.
    pub fn fit(tuples: &[TransitionTuple]) -> Result<Self> {
        if tuples.is_empty() {
            return Err(Error::data("cannot compute normalization statistics of an empty set"));
        }
        let mut state_mean = [0.0; 5];
        let mut state_scale = [1.0; 5];
        let mut state_median = [0.0; 5];
        let mut column = Vec::with_capacity(tuples.len());
        for d in 0..5 {
            column.clear();
            column.extend(tuples.iter().map(|t| t.state.to_array()[d]));
            let (m, s) = mean_std(&column);
            state_mean[d] = m;
            state_scale[d] = s;
            state_median[d] = median(&mut column);
        }
        column.clear();
        column.extend(tuples.iter().filter(|t| !t.is_inaction()).map(|t| t.acont));
        let (acont_mean, acont_scale) = if column.is_empty() { (0.0, 1.0) } else { mean_std(&column) };
        Ok(Self { state_mean, state_scale, acont_mean, acont_scale, state_median })
    }

    pub fn state(&self, s: &RfmiState) -> [f64; 5] {
        let v = s.to_array();
        std::array::from_fn(|d| (v[d] - self.state_mean[d]) / self.state_scale[d])
    }

    pub fn state_inverse(&self, z: &[f64; 5]) -> RfmiState {
        RfmiState::from_array(std::array::from_fn(|d| z[d] * self.state_scale[d] + self.state_mean[d]))
    }

    /// Normalized continuous attribute; inaction always maps to 0.
    pub fn acont(&self, action: usize, acont: f64) -> f64 {
        if action == INACTION {
            0.0
        } else {
            (acont - self.acont_mean) / self.acont_scale
        }
    }

    pub fn acont_inverse(&self, z: f64) -> f64 {
        z * self.acont_scale + self.acont_mean
    }

    pub fn apply(&self, t: &TransitionTuple) -> TransitionTuple {
        TransitionTuple {
            state: RfmiState::from_array(self.state(&t.state)),
            action: t.action,
            acont: self.acont(t.action, t.acont),
            next_state: RfmiState::from_array(self.state(&t.next_state)),
            reward: t.reward,
        }
    }
}

/// Mean and population standard deviation; the deviation of a constant column is reported as 1.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Standardizes states, next states and continuous attributes with statistics fitted on `tuples`.
pub fn normalize_states(tuples: &[TransitionTuple]) -> Result<(Vec<TransitionTuple>, NormStats)> {
    let stats = NormStats::fit(tuples)?;
    Ok((tuples.iter().map(|t| stats.apply(t)).collect(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timeline(amounts: &[f64], contacts: &[(usize, usize, f64)]) -> CustomerTimeline {
        let mut slots = vec![None; amounts.len()];
        for &(p, action, acont) in contacts {
            slots[p] = Some(Contact { action, acont });
        }
        CustomerTimeline::new("c", amounts.to_vec(), slots).unwrap()
    }

    #[test]
    fn empty_history_convention() {
        let t = CustomerTimeline::empty("x", 8);
        assert_eq!(compute_state(&t, 5).unwrap(), RfmiState::new(5.0, 0.0, 0.0, 5.0, 0.0));
        assert_eq!(compute_state(&t, 0).unwrap(), RfmiState::default());
    }

    #[test]
    fn transaction_counts() {
        let t = timeline(&[0.0, 10.0, 0.0, 20.0], &[]);
        let s = compute_state(&t, 4).unwrap();
        assert_eq!((s.recency, s.frequency, s.monetary), (1.0, 2.0, 15.0));
    }

    #[test]
    fn contact_counts() {
        let t = timeline(&[0.0; 4], &[(0, 3, 1.0), (2, 5, 2.0)]);
        let s = compute_state(&t, 3).unwrap();
        assert_eq!((s.i_recency, s.i_frequency), (1.0, 2.0));
    }

    #[test]
    fn out_of_range_period() {
        let t = CustomerTimeline::empty("x", 3);
        assert!(compute_state(&t, 3).is_ok());
        assert!(matches!(compute_state(&t, 4), Err(Error::Data { .. })));
    }

    #[test]
    fn state_ignores_current_and_later_periods() {
        let a = timeline(&[5.0, 0.0, 7.0, 0.0], &[(1, 2, 3.0)]);
        let b = timeline(&[5.0, 0.0, 99.0, 42.0], &[(1, 2, 3.0), (2, 9, 1.0), (3, 4, 0.0)]);
        assert_eq!(compute_state(&a, 2).unwrap(), compute_state(&b, 2).unwrap());
    }

    #[test]
    fn inaction_contacts_are_dropped() {
        let t = timeline(&[0.0, 0.0], &[(0, 0, 5.0)]);
        assert_eq!(t.contacts()[0], None);
        assert_eq!(compute_state(&t, 2).unwrap().i_frequency, 0.0);
    }

    #[test]
    fn timeline_validation() {
        assert!(CustomerTimeline::new("a", vec![1.0, -1.0], vec![None, None]).is_err());
        assert!(CustomerTimeline::new("a", vec![1.0], vec![None, None]).is_err());
        assert!(CustomerTimeline::new("a", vec![f64::NAN], vec![None]).is_err());
    }

    #[test]
    fn twenty_three_periods_give_twenty_two_tuples() {
        let t = CustomerTimeline::empty("x", 23);
        assert_eq!(build_transitions(&t).unwrap().len(), 22);
    }

    #[test]
    fn empty_two_period_timeline() {
        let t = CustomerTimeline::empty("x", 2);
        let tuples = build_transitions(&t).unwrap();
        assert_eq!(tuples.len(), 1);
        let tt = tuples[0];
        assert_eq!((tt.action, tt.reward), (INACTION, 0.0));
        assert_eq!((tt.state.recency, tt.next_state.recency), (0.0, 1.0));
    }

    #[test]
    fn too_short_timeline() {
        assert!(build_transitions(&CustomerTimeline::empty("x", 1)).is_err());
    }

    #[test]
    fn hand_walked_three_periods() {
        // first period: type-4 contact in month 6 and a donation of 10
        let t = timeline(&[10.0, 0.0, 0.0], &[(0, 4, 6.0)]);
        let tuples = build_transitions(&t).unwrap();
        assert_eq!(tuples.len(), 2);
        assert_eq!((tuples[0].action, tuples[0].acont, tuples[0].reward), (4, 6.0, 10.0));
        assert_eq!(tuples[0].state, RfmiState::default());
        assert_eq!(tuples[1].state, RfmiState::new(1.0, 1.0, 10.0, 1.0, 1.0));
        assert_eq!(tuples[1].next_state, RfmiState::new(2.0, 1.0, 10.0, 2.0, 1.0));
        assert_eq!((tuples[1].action, tuples[1].acont, tuples[1].reward), (INACTION, 0.0, 0.0));
    }

    #[test]
    fn single_tuple_normalizes_to_zero() {
        let t = TransitionTuple::new(RfmiState::new(3.0, 1.0, 20.0, 2.0, 4.0), 5, 7.0, RfmiState::default(), 1.0);
        let (norm, stats) = normalize_states(&[t]).unwrap();
        assert_eq!(norm[0].state.to_array(), [0.0; 5]);
        assert_eq!(norm[0].acont, 0.0);
        assert_eq!(stats.state_scale, [1.0; 5]);
    }

    #[test]
    fn two_point_dimension_maps_to_unit() {
        let mk = |r: f64| TransitionTuple::new(RfmiState::new(r, 0.0, 0.0, 0.0, 0.0), 1, r, RfmiState::default(), 0.0);
        let (norm, _) = normalize_states(&[mk(0.0), mk(10.0)]).unwrap();
        assert_eq!(norm[0].state.recency, -1.0);
        assert_eq!(norm[1].state.recency, 1.0);
        assert_eq!((norm[0].acont, norm[1].acont), (-1.0, 1.0));
    }

    #[test]
    fn inaction_excluded_from_acont_stats() {
        let a = TransitionTuple::new(RfmiState::default(), 3, 4.0, RfmiState::default(), 0.0);
        let b = TransitionTuple::new(RfmiState::default(), 3, 8.0, RfmiState::default(), 0.0);
        let idle = TransitionTuple::new(RfmiState::default(), INACTION, 0.0, RfmiState::default(), 0.0);
        let (norm, stats) = normalize_states(&[a, b, idle]).unwrap();
        assert_eq!((stats.acont_mean, stats.acont_scale), (6.0, 2.0));
        assert_eq!(norm[2].acont, 0.0);
    }

    #[test]
    fn stored_stats_reproduce_normalization() {
        let tuples: Vec<_> =
            build_transitions(&timeline(&[0.0, 3.0, 0.0, 9.5, 1.0, 0.0], &[(1, 2, 3.0), (3, 7, 11.0)])).unwrap();
        let (norm, stats) = normalize_states(&tuples).unwrap();
        let again: Vec<_> = tuples.iter().map(|t| stats.apply(t)).collect();
        assert_eq!(norm, again);
    }

    #[test]
    fn empty_normalization_input() {
        assert!(normalize_states(&[]).is_err());
    }

    #[test]
    fn state_dim_names_parse() {
        for d in StateDim::ALL {
            assert_eq!(d.name().parse::<StateDim>().unwrap(), d);
        }
        assert!("age".parse::<StateDim>().is_err());
    }
}
