//! Model checkpoints: the binary network file plus a `key=value` sidecar
//! (`<path>.meta`) holding normalization statistics, the action space and
//! the training configuration.

use std::path::{Path, PathBuf};

use crate::action_space::{ActionSpace, ActionSpec, ContOptConfig, Mode};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::QModel;
use crate::nn::Mlp;
use crate::qlearn::TrainConfig;
use crate::rfmi::NormStats;

pub const SIDECAR_FORMAT: &str = "clvdqn-sidecar-1";

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn train_config_to_kv(cfg: &TrainConfig, kv: &mut KvMap, prefix: &str) {
    kv.set(format!("{prefix}gamma"), cfg.gamma);
    kv.set(format!("{prefix}lr0"), cfg.lr0);
    kv.set(format!("{prefix}lr_decay_per_epoch"), cfg.lr_decay_per_epoch);
    kv.set(format!("{prefix}batch_size"), cfg.batch_size);
    kv.set(format!("{prefix}epochs"), cfg.epochs);
    kv.set(format!("{prefix}target_clone_period"), cfg.target_clone_period);
    kv.set(format!("{prefix}seed"), cfg.seed);
    kv.set(format!("{prefix}mode"), cfg.mode);
}

/// Reads the keys written by [`train_config_to_kv`]; missing keys keep the defaults.
pub fn train_config_from_kv(kv: &KvMap, prefix: &str) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let k = |name: &str| format!("{prefix}{name}");
    Ok(TrainConfig {
        gamma: kv.get(&k("gamma"))?.unwrap_or(d.gamma),
        lr0: kv.get(&k("lr0"))?.unwrap_or(d.lr0),
        lr_decay_per_epoch: kv.get(&k("lr_decay_per_epoch"))?.unwrap_or(d.lr_decay_per_epoch),
        batch_size: kv.get(&k("batch_size"))?.unwrap_or(d.batch_size),
        epochs: kv.get(&k("epochs"))?.unwrap_or(d.epochs),
        target_clone_period: kv.get(&k("target_clone_period"))?.unwrap_or(d.target_clone_period),
        seed: kv.get(&k("seed"))?.unwrap_or(d.seed),
        mode: kv.get(&k("mode"))?.unwrap_or(d.mode),
    })
}

pub fn sidecar_text(model: &QModel, train: Option<&TrainConfig>) -> String {
    let mut kv = KvMap::new();
    kv.set("format", SIDECAR_FORMAT);
    kv.set("mode", model.space.mode);
    kv.set("n_discrete", model.space.spec.n_discrete);
    if let Some(&(lo, hi)) = model.space.spec.bounds.first() {
        kv.set_list("acont_bounds", &[lo, hi]);
    }
    kv.set("cont.restarts", model.space.cont.restarts);
    kv.set("cont.steps", model.space.cont.steps);
    kv.set("cont.step_size", model.space.cont.step_size);
    kv.set("cont.seed", model.space.cont.seed);
    let n = &model.norm;
    kv.set_list("norm.state_mean", &n.state_mean);
    kv.set_list("norm.state_scale", &n.state_scale);
    kv.set_list("norm.state_median", &n.state_median);
    kv.set("norm.acont_mean", n.acont_mean);
    kv.set("norm.acont_scale", n.acont_scale);
    if let Some(cfg) = train {
        train_config_to_kv(cfg, &mut kv, "train.");
    }
    kv.to_text()
}

pub fn parse_sidecar(text: &str) -> Result<(NormStats, ActionSpace, Option<TrainConfig>)> {
    let kv = KvMap::parse(text)?;
    let format: String = kv.require("format")?;
    if format != SIDECAR_FORMAT {
        return Err(Error::format(format!("unsupported sidecar format '{format}'")));
    }
    let mode: Mode = kv.require("mode")?;
    let n_discrete: usize = kv.require("n_discrete")?;
    let bounds = match kv.get_list("acont_bounds")? {
        Some(b) if b.len() == 2 => vec![(b[0], b[1])],
        Some(_) => return Err(Error::format("acont_bounds needs two values")),
        None => Vec::new(),
    };
    let d = ContOptConfig::default();
    let cont = ContOptConfig {
        restarts: kv.get("cont.restarts")?.unwrap_or(d.restarts),
        steps: kv.get("cont.steps")?.unwrap_or(d.steps),
        step_size: kv.get("cont.step_size")?.unwrap_or(d.step_size),
        seed: kv.get("cont.seed")?.unwrap_or(d.seed),
    };
    let norm = NormStats {
        state_mean: kv.require_array("norm.state_mean")?,
        state_scale: kv.require_array("norm.state_scale")?,
        state_median: kv.require_array("norm.state_median")?,
        acont_mean: kv.require("norm.acont_mean")?,
        acont_scale: kv.require("norm.acont_scale")?,
    };
    let train =
        if kv.keys().any(|k| k.starts_with("train.")) { Some(train_config_from_kv(&kv, "train.")?) } else { None };
    let space = ActionSpace { mode, spec: ActionSpec { n_discrete, bounds }, cont };
    Ok((norm, space, train))
}

/// Writes `path` (network) and `path.meta` (sidecar).
pub fn save_checkpoint(path: impl AsRef<Path>, model: &QModel, train: Option<&TrainConfig>) -> Result<()> {
    let path = path.as_ref();
    model.net.save(path)?;
    std::fs::write(sidecar_path(path), sidecar_text(model, train))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(QModel, Option<TrainConfig>)> {
    let path = path.as_ref();
    let net = Mlp::load(path)?;
    let meta = sidecar_path(path);
    let text = std::fs::read_to_string(&meta)
        .map_err(|e| Error::Format { path: Some(meta.clone()), message: format!("cannot read sidecar: {e}") })?;
    let (norm, space, train) =
        parse_sidecar(&text).map_err(|e| Error::Format { path: Some(meta), message: e.to_string() })?;
    let model = QModel::new(net, norm, space)?;
    Ok((model, train))
}
