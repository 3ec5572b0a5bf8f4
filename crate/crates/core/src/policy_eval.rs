//! Policy extraction, CLV queries, value curves and logged-data evaluation.
//!
//! Evaluation follows the matched-versus-deviated protocol: every logged
//! transition is classified by whether the logged action agrees with the
//! policy's recommendation for the logged state, and the two groups' response
//! rates and mean rewards are compared. The groups are not reweighted, so the
//! comparison is a biased off-policy estimate.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::action_space::Mode;
use crate::error::{Error, Result};
use crate::model::{QModel, Recommendation};
use crate::rfmi::{RfmiState, StateDim, TransitionTuple, INACTION};

/// Greedy recommendation for each raw state, in input order.
pub fn extract_policy(model: &QModel, states: &[RfmiState]) -> Result<Vec<Recommendation>> {
    states.par_iter().map(|s| model.recommend(s)).collect()
}

/// Outcome counts of a group of transitions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupStats {
    pub n: usize,
    pub responders: usize,
    pub reward_sum: f64,
}

impl GroupStats {
    pub fn add(&mut self, reward: f64) {
        self.n += 1;
        if reward > 0.0 {
            self.responders += 1;
        }
        self.reward_sum += reward;
    }

    /// Fraction with positive reward; `None` for an empty group.
    pub fn response_rate(&self) -> Option<f64> {
        (self.n > 0).then(|| self.responders as f64 / self.n as f64)
    }

    pub fn mean_reward(&self) -> Option<f64> {
        (self.n > 0).then(|| self.reward_sum / self.n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub matched: GroupStats,
    pub deviated: GroupStats,
    pub random_baseline: GroupStats,
    /// Logged action with the highest mean reward, and its group.
    pub best_single_action: Option<(usize, GroupStats)>,
    pub dataset: GroupStats,
    pub mode: Mode,
}

/// Whether a logged transition agrees with a recommendation. In mixed mode the
/// continuous attributes must also agree after rounding to the nearest integer.
pub fn is_match(logged: &TransitionTuple, rec: &Recommendation, mode: Mode) -> bool {
    if logged.action != rec.action {
        return false;
    }
    match (mode, rec.acont) {
        (Mode::Mixed, Some(acont)) if logged.action != INACTION => logged.acont.round() == acont.round(),
        _ => true,
    }
}

/// Builds a report from precomputed match flags.
pub fn evaluate_matches(
    transitions: &[TransitionTuple],
    matched_flags: &[bool],
    n_actions: usize,
    mode: Mode,
    seed: u64,
) -> Result<EvaluationReport> {
    if transitions.is_empty() {
        return Err(Error::data("cannot evaluate a policy on zero transitions"));
    }
    if matched_flags.len() != transitions.len() {
        return Err(Error::Shape("one match flag per transition is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matched = GroupStats::default();
    let mut deviated = GroupStats::default();
    let mut random = GroupStats::default();
    let mut dataset = GroupStats::default();
    let mut per_action = vec![GroupStats::default(); n_actions];
    for (t, &m) in transitions.iter().zip(matched_flags) {
        if m {
            matched.add(t.reward);
        } else {
            deviated.add(t.reward);
        }
        if rng.gen_range(0..n_actions) == t.action {
            random.add(t.reward);
        }
        if let Some(g) = per_action.get_mut(t.action) {
            g.add(t.reward);
        }
        dataset.add(t.reward);
    }
    let mut best_single_action: Option<(usize, GroupStats)> = None;
    for (a, g) in per_action.into_iter().enumerate() {
        let Some(mean) = g.mean_reward() else { continue };
        if best_single_action.map_or(true, |(_, b)| mean > b.mean_reward().unwrap_or(f64::NEG_INFINITY)) {
            best_single_action = Some((a, g));
        }
    }
    Ok(EvaluationReport { matched, deviated, random_baseline: random, best_single_action, dataset, mode })
}

/// Evaluates the model's greedy policy against logged raw transitions.
///
/// `seed` drives the random-policy baseline.
pub fn evaluate(transitions: &[TransitionTuple], model: &QModel, seed: u64) -> Result<EvaluationReport> {
    if transitions.is_empty() {
        return Err(Error::data("cannot evaluate a policy on zero transitions"));
    }
    let mode = model.mode();
    let flags: Vec<bool> = transitions
        .par_iter()
        .map(|t| model.recommend(&t.state).map(|rec| is_match(t, &rec, mode)))
        .collect::<Result<_>>()?;
    evaluate_matches(transitions, &flags, model.n_actions(), mode, seed)
}

fn fmt_opt(v: Option<f64>, pct: bool) -> String {
    match v {
        Some(x) if pct => format!("{:.1}%", 100.0 * x),
        Some(x) => format!("{x:.2}"),
        None => "n/a".to_string(),
    }
}

impl EvaluationReport {
    pub fn total(&self) -> usize {
        self.dataset.n
    }

    fn rows(&self) -> Vec<(String, String, GroupStats)> {
        let mut rows = vec![
            ("matched".to_string(), String::new(), self.matched),
            ("deviated".to_string(), String::new(), self.deviated),
            ("random_policy".to_string(), String::new(), self.random_baseline),
        ];
        if let Some((a, g)) = self.best_single_action {
            rows.push(("best_single_action".to_string(), a.to_string(), g));
        }
        rows.push(("dataset_mean".to_string(), String::new(), self.dataset));
        rows
    }

    /// Human-readable table. `timestamp`, when given, is printed on its own line.
    pub fn to_text(&self, timestamp: Option<&str>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Policy evaluation ({} action model, {} transitions)", self.mode, self.total());
        let _ = writeln!(
            out,
            "Caveat: groups are compared without importance weighting; matched-group figures are a biased off-policy estimate."
        );
        if let Some(ts) = timestamp {
            let _ = writeln!(out, "Generated: {ts}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<52} {:>10} {:>18} {:>20}", "", "n", "response rate", "mean reward");
        let label = |key: &str, action: &str| -> String {
            match key {
                "matched" => "Marketing done as recommended by the model".into(),
                "deviated" => "Marketing deviated from the model's recommendation".into(),
                "random_policy" => "Random policy".into(),
                "best_single_action" => format!("Only the top performing action (#{action})"),
                _ => "Mean reward across the data set".into(),
            }
        };
        for (key, action, g) in self.rows() {
            let _ = writeln!(
                out,
                "{:<52} {:>10} {:>18} {:>20}",
                label(&key, &action),
                g.n,
                fmt_opt(g.response_rate(), true),
                fmt_opt(g.mean_reward(), false)
            );
        }
        out
    }

    /// CSV with columns `group,action,n,responders,response_rate,mean_reward`;
    /// undefined rates are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "group,action,n,responders,response_rate,mean_reward")?;
        for (key, action, g) in self.rows() {
            let rate = g.response_rate().map(|v| v.to_string()).unwrap_or_default();
            let mean = g.mean_reward().map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{key},{action},{},{},{rate},{mean}", g.n, g.responders)?;
        }
        Ok(())
    }
}

/// Expected discounted future reward of every action from one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClvEstimate {
    pub values: Vec<f64>,
    /// Raw continuous attribute at which each value was attained (mixed mode only).
    pub aconts: Vec<Option<f64>>,
    pub best_action: usize,
    pub best_value: f64,
}

impl ClvEstimate {
    /// One row per action: `action,clv,acont`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "action,clv,acont")?;
        for (a, (v, c)) in self.values.iter().zip(&self.aconts).enumerate() {
            let c = c.map(|c| c.to_string()).unwrap_or_default();
            writeln!(w, "{a},{v},{c}")?;
        }
        Ok(())
    }
}

/// Plug-in CLV for one customer: the Q-values at the customer's raw state.
pub fn estimate_clv(model: &QModel, raw_state: &RfmiState) -> Result<ClvEstimate> {
    raw_state.validate()?;
    let recs = model.action_values(raw_state)?;
    let values: Vec<f64> = recs.iter().map(|r| r.q_value).collect();
    let best_action = crate::action_space::argmax(&values);
    Ok(ClvEstimate {
        best_value: values[best_action],
        aconts: recs.iter().map(|r| r.acont).collect(),
        values,
        best_action,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepAxis {
    pub dim: StateDim,
    pub lo: f64,
    pub hi: f64,
}

/// Grid over one or two raw state dimensions; other dimensions stay at `reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
    /// Points per axis, endpoints included.
    pub resolution: usize,
    /// Defaults to the medians stored in the model's normalization statistics.
    pub reference: Option<RfmiState>,
}

impl SweepSpec {
    pub fn one(dim: StateDim, lo: f64, hi: f64, resolution: usize) -> Self {
        Self { axes: vec![SweepAxis { dim, lo, hi }], resolution, reference: None }
    }

    fn points(&self, axis: &SweepAxis) -> Vec<f64> {
        if self.resolution == 1 {
            return vec![axis.lo];
        }
        let step = (axis.hi - axis.lo) / (self.resolution - 1) as f64;
        (0..self.resolution)
            .map(|i| if i + 1 == self.resolution { axis.hi } else { axis.lo + step * i as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub coords: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub dims: Vec<StateDim>,
    pub n_actions: usize,
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<String> = self.dims.iter().map(|d| d.name().to_string()).collect();
        header.extend((0..self.n_actions).map(|a| format!("q{a}")));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let fields: Vec<String> = r.coords.iter().chain(&r.q).map(f64::to_string).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Q-values of one action along the rows.
    pub fn column(&self, action: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.q[action]).collect()
    }
}

/// Per-action values along a grid of raw states (first axis outermost).
pub fn export_value_curves(model: &QModel, sweep: &SweepSpec) -> Result<CurveTable> {
    if sweep.axes.is_empty() || sweep.axes.len() > 2 {
        return Err(Error::Config(format!("a sweep needs 1 or 2 dimensions, got {}", sweep.axes.len())));
    }
    if sweep.axes.len() == 2 && sweep.axes[0].dim == sweep.axes[1].dim {
        return Err(Error::Config("sweep dimensions must differ".into()));
    }
    if sweep.resolution == 0 {
        return Err(Error::Config("sweep resolution must be at least 1".into()));
    }
    for a in &sweep.axes {
        if !(a.lo.is_finite() && a.hi.is_finite() && a.lo <= a.hi) {
            return Err(Error::Config(format!("invalid range [{}, {}] for {}", a.lo, a.hi, a.dim.name())));
        }
    }
    let reference = sweep.reference.unwrap_or_else(|| RfmiState::from_array(model.norm.state_median));
    let grids: Vec<Vec<f64>> = sweep.axes.iter().map(|a| sweep.points(a)).collect();
    let mut coords = Vec::new();
    match grids.as_slice() {
        [g] => coords.extend(g.iter().map(|&x| vec![x])),
        [g0, g1] => {
            for &x in g0 {
                coords.extend(g1.iter().map(|&y| vec![x, y]));
            }
        }
        _ => unreachable!(),
    }
    let rows = coords
        .into_par_iter()
        .map(|c| {
            let mut s = reference;
            for (axis, &v) in sweep.axes.iter().zip(&c) {
                s.set(axis.dim, v);
            }
            let q = model.action_values(&s)?.into_iter().map(|r| r.q_value).collect();
            Ok(CurveRow { coords: c, q })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveTable { dims: sweep.axes.iter().map(|a| a.dim).collect(), n_actions: model.n_actions(), rows })
}
