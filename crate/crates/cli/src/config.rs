//! Run configuration: a flat `key=value` file whose values command-line flags override.

use std::path::PathBuf;

use clvdqn_core::action_space::ActionSpec;
use clvdqn_core::env::{ActionConstraint, AgentConfig, DonorModel};
use clvdqn_core::kv::KvMap;
use clvdqn_core::{ContOptConfig, Error, Mode, Result, TrainConfig};

/// Every key a config file may contain.
pub const KEYS: &[&str] = &[
    "seed",
    "mode",
    "validation_fraction",
    "n_discrete",
    "acont_min",
    "acont_max",
    "customers",
    "train.gamma",
    "train.lr0",
    "train.lr_decay_per_epoch",
    "train.batch_size",
    "train.epochs",
    "train.target_clone_period",
    "cont.restarts",
    "cont.steps",
    "cont.step_size",
    "donor.base_rate",
    "donor.action_effects",
    "donor.fatigue_coeff",
    "donor.recency_decay",
    "donor.thankyou_action",
    "donor.thankyou_boost",
    "donor.amount_mean",
    "donor.window",
    "agent.epsilon0",
    "agent.epsilon_floor",
    "agent.epsilon_decay",
    "agent.episodes",
    "agent.train_every",
    "agent.steps_per_burst",
    "agent.replay_capacity",
    "agent.constraints",
    "agent.drop_threshold",
    "agent.drop_min_samples",
    "paths.timelines",
    "paths.transitions",
    "paths.checkpoint",
    "paths.history",
    "paths.output",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub timelines: Option<PathBuf>,
    pub transitions: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Effective settings of one run. A single `seed` drives every random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub validation_fraction: f64,
    pub n_discrete: usize,
    /// Raw bounds of the continuous attribute; taken from the training data when absent.
    pub acont_min: Option<f64>,
    pub acont_max: Option<f64>,
    /// Simulated population size.
    pub customers: usize,
    pub train: TrainConfig,
    pub cont: ContOptConfig,
    pub donor: DonorModel,
    pub agent: AgentConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::DiscreteOnly,
            validation_fraction: 0.25,
            n_discrete: ActionSpec::DEFAULT_DISCRETE,
            acont_min: None,
            acont_max: None,
            customers: 10_000,
            train: TrainConfig::default(),
            cont: ContOptConfig::default(),
            donor: DonorModel::default(),
            agent: AgentConfig::default(),
            paths: Paths::default(),
        }
    }
}

// Offsets that separate the random streams derived from the run seed.
const DONOR_STREAM: u64 = 0xD1B5_4A32_D192_ED03;
const POPULATION_STREAM: u64 = 0x8CB9_2BA7_2F3D_8DD7;
const SPLIT_STREAM: u64 = 0xAEF1_7502_108E_F2D9;

impl RunConfig {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown config key '{k}'")));
        }
        let d = Self::default();
        let t = &d.train;
        let c = &d.cont;
        let m = &d.donor;
        let a = &d.agent;
        let path = |k: &str| kv.raw(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        let constraints = match kv.raw("agent.constraints") {
            Some(v) => v
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<ActionConstraint>>>()?,
            None => Vec::new(),
        };
        let drop_threshold = match kv.raw("agent.drop_threshold") {
            None | Some("") | Some("none") => None,
            Some(_) => Some(kv.require("agent.drop_threshold")?),
        };
        let cfg = Self {
            seed: kv.get("seed")?.unwrap_or(d.seed),
            mode: kv.get("mode")?.unwrap_or(d.mode),
            validation_fraction: kv.get("validation_fraction")?.unwrap_or(d.validation_fraction),
            n_discrete: kv.get("n_discrete")?.unwrap_or(d.n_discrete),
            acont_min: opt_f64(kv, "acont_min")?,
            acont_max: opt_f64(kv, "acont_max")?,
            customers: kv.get("customers")?.unwrap_or(d.customers),
            train: TrainConfig {
                gamma: kv.get("train.gamma")?.unwrap_or(t.gamma),
                lr0: kv.get("train.lr0")?.unwrap_or(t.lr0),
                lr_decay_per_epoch: kv.get("train.lr_decay_per_epoch")?.unwrap_or(t.lr_decay_per_epoch),
                batch_size: kv.get("train.batch_size")?.unwrap_or(t.batch_size),
                epochs: kv.get("train.epochs")?.unwrap_or(t.epochs),
                target_clone_period: kv.get("train.target_clone_period")?.unwrap_or(t.target_clone_period),
                ..TrainConfig::default()
            },
            cont: ContOptConfig {
                restarts: kv.get("cont.restarts")?.unwrap_or(c.restarts),
                steps: kv.get("cont.steps")?.unwrap_or(c.steps),
                step_size: kv.get("cont.step_size")?.unwrap_or(c.step_size),
                ..ContOptConfig::default()
            },
            donor: DonorModel {
                base_rate: kv.get("donor.base_rate")?.unwrap_or(m.base_rate),
                action_effects: kv.get_list("donor.action_effects")?.unwrap_or_else(|| m.action_effects.clone()),
                fatigue_coeff: kv.get("donor.fatigue_coeff")?.unwrap_or(m.fatigue_coeff),
                recency_decay: kv.get("donor.recency_decay")?.unwrap_or(m.recency_decay),
                thankyou_action: kv.get("donor.thankyou_action")?.unwrap_or(m.thankyou_action),
                thankyou_boost: kv.get("donor.thankyou_boost")?.unwrap_or(m.thankyou_boost),
                amount_mean: kv.get("donor.amount_mean")?.unwrap_or(m.amount_mean),
                window: kv.get("donor.window")?.unwrap_or(m.window),
                ..DonorModel::default()
            },
            agent: AgentConfig {
                epsilon0: kv.get("agent.epsilon0")?.unwrap_or(a.epsilon0),
                epsilon_floor: kv.get("agent.epsilon_floor")?.unwrap_or(a.epsilon_floor),
                epsilon_decay: kv.get("agent.epsilon_decay")?.unwrap_or(a.epsilon_decay),
                episodes: kv.get("agent.episodes")?.unwrap_or(a.episodes),
                train_every: kv.get("agent.train_every")?.unwrap_or(a.train_every),
                steps_per_burst: kv.get("agent.steps_per_burst")?.unwrap_or(a.steps_per_burst),
                replay_capacity: kv.get("agent.replay_capacity")?.unwrap_or(a.replay_capacity),
                constraints,
                drop_threshold,
                drop_min_samples: kv.get("agent.drop_min_samples")?.unwrap_or(a.drop_min_samples),
                ..AgentConfig::default()
            },
            paths: Paths {
                timelines: path("paths.timelines"),
                transitions: path("paths.transitions"),
                checkpoint: path("paths.checkpoint"),
                history: path("paths.history"),
                output: path("paths.output"),
            },
        };
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("seed", self.seed);
        kv.set("mode", self.mode);
        kv.set("validation_fraction", self.validation_fraction);
        kv.set("n_discrete", self.n_discrete);
        if let Some(v) = self.acont_min {
            kv.set("acont_min", v);
        }
        if let Some(v) = self.acont_max {
            kv.set("acont_max", v);
        }
        kv.set("customers", self.customers);
        let t = &self.train;
        kv.set("train.gamma", t.gamma);
        kv.set("train.lr0", t.lr0);
        kv.set("train.lr_decay_per_epoch", t.lr_decay_per_epoch);
        kv.set("train.batch_size", t.batch_size);
        kv.set("train.epochs", t.epochs);
        kv.set("train.target_clone_period", t.target_clone_period);
        kv.set("cont.restarts", self.cont.restarts);
        kv.set("cont.steps", self.cont.steps);
        kv.set("cont.step_size", self.cont.step_size);
        let m = &self.donor;
        kv.set("donor.base_rate", m.base_rate);
        kv.set_list("donor.action_effects", &m.action_effects);
        kv.set("donor.fatigue_coeff", m.fatigue_coeff);
        kv.set("donor.recency_decay", m.recency_decay);
        kv.set("donor.thankyou_action", m.thankyou_action);
        kv.set("donor.thankyou_boost", m.thankyou_boost);
        kv.set("donor.amount_mean", m.amount_mean);
        kv.set("donor.window", m.window);
        let a = &self.agent;
        kv.set("agent.epsilon0", a.epsilon0);
        kv.set("agent.epsilon_floor", a.epsilon_floor);
        kv.set("agent.epsilon_decay", a.epsilon_decay);
        kv.set("agent.episodes", a.episodes);
        kv.set("agent.train_every", a.train_every);
        kv.set("agent.steps_per_burst", a.steps_per_burst);
        kv.set("agent.replay_capacity", a.replay_capacity);
        let constraints: Vec<String> = a.constraints.iter().map(ToString::to_string).collect();
        kv.set("agent.constraints", constraints.join(";"));
        kv.set("agent.drop_threshold", a.drop_threshold.map_or("none".to_string(), |v| v.to_string()));
        kv.set("agent.drop_min_samples", a.drop_min_samples);
        let p = &self.paths;
        for (k, v) in [
            ("paths.timelines", &p.timelines),
            ("paths.transitions", &p.transitions),
            ("paths.checkpoint", &p.checkpoint),
            ("paths.history", &p.history),
            ("paths.output", &p.output),
        ] {
            if let Some(v) = v {
                kv.set(k, v.display());
            }
        }
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must be in (0,1), got {}",
                self.validation_fraction
            )));
        }
        if let (Some(lo), Some(hi)) = (self.acont_min, self.acont_max) {
            if lo >= hi || lo.is_nan() || hi.is_nan() {
                return Err(Error::Config(format!("acont_min {lo} must be below acont_max {hi}")));
            }
        }
        if self.customers == 0 {
            return Err(Error::Config("customers must be positive".into()));
        }
        self.train_config().validate()?;
        self.cont.validate()?;
        self.donor_model().validate()?;
        self.agent_config().validate()?;
        ActionSpec::discrete(self.n_discrete).validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, mode: self.mode, ..self.train.clone() }
    }

    pub fn cont_config(&self) -> ContOptConfig {
        ContOptConfig { seed: self.seed, ..self.cont }
    }

    pub fn donor_model(&self) -> DonorModel {
        DonorModel { seed: self.seed ^ DONOR_STREAM, ..self.donor.clone() }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig { seed: self.seed, ..self.agent.clone() }
    }

    pub fn population_seed(&self) -> u64 {
        self.seed ^ POPULATION_STREAM
    }

    pub fn split_seed(&self) -> u64 {
        self.seed ^ SPLIT_STREAM
    }
}

fn opt_f64(kv: &KvMap, key: &str) -> Result<Option<f64>> {
    match kv.raw(key) {
        None | Some("") | Some("none") => Ok(None),
        Some(_) => kv.get(key),
    }
}
