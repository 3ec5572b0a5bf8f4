use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clvdqn_core::checkpoint::{load_checkpoint, save_checkpoint};
use clvdqn_core::env::{run_autonomous, write_episode_csv};
use clvdqn_core::io::{read_timelines, read_transitions, write_transitions};
use clvdqn_core::policy_eval::{estimate_clv, evaluate, export_value_curves, SweepAxis, SweepSpec};
use clvdqn_core::qlearn;
use clvdqn_core::rfmi::{build_transitions, StateDim, INACTION};
use clvdqn_core::{ActionSpace, ActionSpec, Error, Mode, NormStats, RfmiState, TransitionTuple};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, CommonArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Builds the effective configuration: file values, then flags.
pub fn effective_config(common: &CommonArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.mode = m;
    }
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    let p = &mut cfg.paths;
    match command {
        Command::BuildTransitions { input, output } => {
            set(&mut p.timelines, input);
            set(&mut p.transitions, output);
        }
        Command::Train { input, checkpoint, history, epochs, validation_fraction } => {
            set(&mut p.transitions, input);
            set(&mut p.checkpoint, checkpoint);
            set(&mut p.history, history);
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(f) = validation_fraction {
                cfg.validation_fraction = *f;
            }
        }
        Command::Evaluate { input, checkpoint, output } => {
            set(&mut p.transitions, input);
            set(&mut p.checkpoint, checkpoint);
            set(&mut p.output, output);
        }
        Command::Clv { checkpoint, output, .. } | Command::Curves { checkpoint, output, .. } => {
            set(&mut p.checkpoint, checkpoint);
            set(&mut p.output, output);
        }
        Command::Simulate { checkpoint, history, customers, episodes } => {
            set(&mut p.checkpoint, checkpoint);
            set(&mut p.history, history);
            if let Some(c) = customers {
                cfg.customers = *c;
            }
            if let Some(e) = episodes {
                cfg.agent.episodes = *e;
            }
        }
    }
    cfg.validate()?;
    check_distinct(&cfg)?;
    Ok(cfg)
}

fn check_distinct(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let set: Vec<&PathBuf> =
        [&p.timelines, &p.transitions, &p.checkpoint, &p.history, &p.output].into_iter().flatten().collect();
    for (i, a) in set.iter().enumerate() {
        if set[i + 1..].contains(a) {
            return Err(CliError::Usage(format!("path {} is used for more than one purpose", a.display())));
        }
    }
    Ok(())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| CliError::Usage(format!("missing --{flag} (or {key} in the config file)")))
}

fn read_file(path: &Path) -> Result<fs::File> {
    fs::File::open(path)
        .map_err(|e| CliError::Core(Error::Format { path: Some(path.to_path_buf()), message: e.to_string() }))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Core(e.into()))
}

/// Writes `bytes` to `path`, or returns them as stdout text when no path is set.
fn emit(path: &Option<PathBuf>, bytes: Vec<u8>) -> Result<String> {
    match path {
        Some(p) => {
            write_file(p, &bytes)?;
            Ok(String::new())
        }
        None => Ok(String::from_utf8(bytes).expect("CSV output is UTF-8")),
    }
}

fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| "unknown".to_string())
}

fn parse_state(text: &str) -> Result<RfmiState> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("'{v}' in state '{text}' is not a number")))
        })
        .collect::<Result<_>>()?;
    let arr: [f64; 5] =
        values.try_into().map_err(|_| CliError::Usage(format!("state '{text}' needs five values r,f,m,ir,if")))?;
    Ok(RfmiState::from_array(arr))
}

/// Seeded row split; both parts keep the input order.
pub fn split(
    transitions: Vec<TransitionTuple>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TransitionTuple>, Vec<TransitionTuple>)> {
    let n = transitions.len();
    if n < 2 {
        return Err(
            Error::data(format!("need at least 2 transitions to split into training and validation, got {n}")).into()
        );
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = transitions.into_iter().zip(is_val).partition(|(_, v)| *v);
    Ok((train.into_iter().map(|(t, _)| t).collect(), val.into_iter().map(|(t, _)| t).collect()))
}

/// Action space for training on `train_set` under `cfg`.
pub fn action_space(cfg: &RunConfig, train_set: &[TransitionTuple], norm: &NormStats) -> Result<ActionSpace> {
    match cfg.mode {
        Mode::DiscreteOnly => Ok(ActionSpace::discrete(cfg.n_discrete)),
        Mode::Mixed => {
            let observed = train_set.iter().filter(|t| t.action != INACTION).map(|t| t.acont);
            let (lo, hi) = observed.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let lo = cfg.acont_min.unwrap_or(lo);
            let hi = cfg.acont_max.unwrap_or(hi);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::data(
                    "mixed mode needs a non-degenerate range of continuous attributes (set acont_min and acont_max)",
                )
                .into());
            }
            let spec = ActionSpec::mixed(cfg.n_discrete, norm.acont(1, lo), norm.acont(1, hi));
            Ok(ActionSpace::mixed(spec, cfg.cont_config()))
        }
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    let cfg = effective_config(&cli.common, &cli.command)?;
    if let Some(path) = &cli.common.dump_config {
        write_file(path, cfg.to_text().as_bytes())?;
    }
    match cli.common.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
            pool.install(|| dispatch(cli, &cfg))
        }
        None => dispatch(cli, &cfg),
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<String> {
    let p = &cfg.paths;
    match &cli.command {
        Command::BuildTransitions { .. } => {
            let input = required(&p.timelines, "input", "paths.timelines")?;
            let output = required(&p.transitions, "output", "paths.transitions")?;
            let rows = cmd_build_transitions(input, output)?;
            Ok(format!("wrote {rows} transitions to {}\n", output.display()))
        }
        Command::Train { .. } => {
            let input = required(&p.transitions, "input", "paths.transitions")?;
            let checkpoint = required(&p.checkpoint, "checkpoint", "paths.checkpoint")?;
            let out = cmd_train(cfg, input, checkpoint, p.history.as_deref())?;
            Ok(format!(
                "trained {} epochs ({} steps); checkpoint {}\n",
                out.history.len(),
                out.steps,
                checkpoint.display()
            ))
        }
        Command::Evaluate { .. } => {
            let input = required(&p.transitions, "input", "paths.transitions")?;
            let checkpoint = required(&p.checkpoint, "checkpoint", "paths.checkpoint")?;
            let ts = (!cli.common.no_timestamp).then(timestamp);
            cmd_evaluate(cfg, input, checkpoint, p.output.as_deref(), ts.as_deref())
        }
        Command::Clv { state, .. } => {
            let checkpoint = required(&p.checkpoint, "checkpoint", "paths.checkpoint")?;
            let bytes = cmd_clv(checkpoint, &parse_state(state)?)?;
            emit(&p.output, bytes)
        }
        Command::Simulate { .. } => {
            let bytes = cmd_simulate(cfg, p.checkpoint.as_deref())?;
            emit(&p.history, bytes)
        }
        Command::Curves { dims, range, resolution, reference, .. } => {
            let checkpoint = required(&p.checkpoint, "checkpoint", "paths.checkpoint")?;
            let sweep = parse_sweep(dims, range, *resolution, reference.as_deref())?;
            emit(&p.output, cmd_curves(checkpoint, &sweep)?)
        }
    }
}

/// Returns the number of transitions written. Nothing is written on error.
pub fn cmd_build_transitions(input: &Path, output: &Path) -> Result<usize> {
    let timelines = read_timelines(read_file(input)?)?;
    if timelines.is_empty() {
        return Err(Error::data("timeline file has no rows").into());
    }
    let mut all = Vec::new();
    for t in &timelines {
        all.extend(build_transitions(t)?);
    }
    let mut bytes = Vec::new();
    write_transitions(&mut bytes, &all)?;
    write_file(output, &bytes)?;
    Ok(all.len())
}

pub fn cmd_train(
    cfg: &RunConfig,
    input: &Path,
    checkpoint: &Path,
    history: Option<&Path>,
) -> Result<qlearn::TrainOutput> {
    let transitions = read_transitions(read_file(input)?)?;
    let (train_set, val_set) = split(transitions, cfg.validation_fraction, cfg.split_seed())?;
    let norm = NormStats::fit(&train_set)?;
    let space = action_space(cfg, &train_set, &norm)?;
    let train_cfg = cfg.train_config();
    let out = qlearn::train(&train_set, &val_set, &norm, &space, &train_cfg)?;
    save_checkpoint(checkpoint, &out.best, Some(&train_cfg))?;
    if let Some(path) = history {
        let mut bytes = Vec::new();
        out.history.write_csv(&mut bytes)?;
        write_file(path, &bytes)?;
    }
    Ok(out)
}

/// Returns the text report; the CSV form goes to `csv` when given.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    input: &Path,
    checkpoint: &Path,
    csv: Option<&Path>,
    ts: Option<&str>,
) -> Result<String> {
    let transitions = read_transitions(read_file(input)?)?;
    let (model, _) = load_checkpoint(checkpoint)?;
    let report = evaluate(&transitions, &model, cfg.seed)?;
    if let Some(path) = csv {
        let mut bytes = Vec::new();
        report.write_csv(&mut bytes)?;
        write_file(path, &bytes)?;
    }
    Ok(report.to_text(ts))
}

pub fn cmd_clv(checkpoint: &Path, state: &RfmiState) -> Result<Vec<u8>> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let clv = estimate_clv(&model, state)?;
    let mut bytes = Vec::new();
    clv.write_csv(&mut bytes)?;
    Ok(bytes)
}

/// Returns the episode history CSV; saves the final model when `checkpoint` is given.
pub fn cmd_simulate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<u8>> {
    if cfg.mode != Mode::DiscreteOnly {
        return Err(CliError::Usage("simulate supports the discrete mode only".into()));
    }
    let donor = cfg.donor_model();
    if donor.n_actions() != cfg.n_discrete {
        return Err(CliError::Usage(format!(
            "donor.action_effects has {} entries but n_discrete is {}",
            donor.n_actions(),
            cfg.n_discrete
        )));
    }
    let population = donor.sample_population(cfg.customers, cfg.population_seed());
    let train_cfg = cfg.train_config();
    let out = run_autonomous(&population, &donor, &cfg.agent_config(), &train_cfg)?;
    if let Some(path) = checkpoint {
        save_checkpoint(path, &out.model, Some(&train_cfg))?;
    }
    let mut bytes = Vec::new();
    write_episode_csv(&mut bytes, &out.history)?;
    Ok(bytes)
}

pub fn parse_sweep(dims: &str, range: &str, resolution: usize, reference: Option<&str>) -> Result<SweepSpec> {
    let dims: Vec<StateDim> = dims.split(',').map(str::parse).collect::<clvdqn_core::Result<_>>()?;
    let ranges: Vec<(f64, f64)> = range
        .split(',')
        .map(|r| {
            let bad = || CliError::Usage(format!("range '{r}' must look like lo:hi"));
            let (lo, hi) = r.split_once(':').ok_or_else(bad)?;
            Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
        })
        .collect::<Result<_>>()?;
    if dims.len() != ranges.len() {
        return Err(CliError::Usage(format!("{} dimensions but {} ranges", dims.len(), ranges.len())));
    }
    let axes = dims.into_iter().zip(ranges).map(|(dim, (lo, hi))| SweepAxis { dim, lo, hi }).collect();
    Ok(SweepSpec { axes, resolution, reference: reference.map(parse_state).transpose()? })
}

pub fn cmd_curves(checkpoint: &Path, sweep: &SweepSpec) -> Result<Vec<u8>> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let table = export_value_curves(&model, sweep)?;
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes)?;
    Ok(bytes)
}
