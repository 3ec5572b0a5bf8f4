use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clvdqn_core::checkpoint::{load_checkpoint, save_checkpoint};
use clvdqn_core::env::{env_step, DonorModel};
use clvdqn_core::io::write_transitions;
use clvdqn_core::qlearn::q_network_layers;
use clvdqn_core::{ActionSpace, Mlp, Mode, NormStats, QModel, RfmiState, TransitionTuple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn clvdqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clvdqn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = clvdqn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Logged transitions from random contacts on the synthetic population.
fn synthetic_transitions(path: &Path, customers: usize, periods: usize, seed: u64) {
    let model = DonorModel { seed, ..DonorModel::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::new();
    for mut state in model.sample_population(customers, seed) {
        for _ in 0..periods {
            let action = rng.gen_range(0..12);
            let acont = if action == 0 { 0.0 } else { rng.gen_range(1..=5) as f64 };
            let (reward, next) = env_step(&model, &state, action, acont, &mut rng).unwrap();
            tuples.push(TransitionTuple::new(state, action, acont, next, reward));
            state = next;
        }
    }
    write_transitions(fs::File::create(path).unwrap(), &tuples).unwrap();
}

#[test]
fn build_transitions_matches_golden_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("t.csv");
    ok(&["build-transitions", "--input", s(&data("timelines.csv")), "--output", s(&out)]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(data("transitions.golden.csv")).unwrap());
}

#[test]
fn build_transitions_counts_periods() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("tl.csv");
    let mut text = String::from("customer_id,period,amount,action,acont\n");
    for c in ["x", "y"] {
        for p in 0..23 {
            text.push_str(&format!("{c},{p},{},{},{}\n", if p % 4 == 0 { 12.5 } else { 0.0 }, p % 12, p % 3));
        }
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("t.csv");
    ok(&["build-transitions", "--input", s(&input), "--output", s(&out)]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1 + 44);
}

#[test]
fn empty_or_malformed_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("tl.csv");
    let out = dir.path().join("t.csv");
    fs::write(&input, "customer_id,period,amount,action,acont\n").unwrap();
    let r = clvdqn(&["build-transitions", "--input", s(&input), "--output", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    fs::write(&input, "customer_id,period,amount,action,acont\na,0,10,4,6\na,1,ten,0,\n").unwrap();
    let r = clvdqn(&["build-transitions", "--input", s(&input), "--output", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(clvdqn(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(clvdqn(&["train"]).status.code(), Some(1));
    assert_eq!(clvdqn(&["clv", "--checkpoint", "x.bin", "--state", "1,2"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "learning_rate=3\n").unwrap();
    assert_eq!(clvdqn(&["--config", s(&cfg), "simulate"]).status.code(), Some(1));
    assert!(clvdqn(&["--help"]).status.success());
}

#[test]
fn clv_on_zero_checkpoint_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let ck = dir.path().join("zero.bin");
    let net = Mlp::zeros(&q_network_layers(Mode::DiscreteOnly, 12)).unwrap();
    save_checkpoint(&ck, &QModel::new(net, NormStats::identity(), ActionSpace::discrete(12)).unwrap(), None).unwrap();
    let out = ok(&["clv", "--checkpoint", s(&ck), "--state", "3,2,14.5,1,4"]);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(out.lines().next(), Some("action,clv,acont"));
    assert_eq!(rows.len(), 12);
    for (a, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], a.to_string());
        assert_eq!(f[1].parse::<f64>().unwrap(), 0.0);
    }
    let r = clvdqn(&["clv", "--checkpoint", s(&ck), "--state", "-1,2,14.5,1,4"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn evaluate_reproduces_the_hand_computed_fixture() {
    let dir = TempDir::new().unwrap();
    let ck = dir.path().join("four.bin");
    let mut net = Mlp::zeros(&q_network_layers(Mode::DiscreteOnly, 12)).unwrap();
    net.biases_mut(2)[4] = 1.0;
    save_checkpoint(&ck, &QModel::new(net, NormStats::identity(), ActionSpace::discrete(12)).unwrap(), None).unwrap();
    let s0 = RfmiState::default();
    let rows = [(4, 10.0), (4, 0.0), (1, 5.0), (2, 0.0)].map(|(a, r)| TransitionTuple::new(s0, a, 0.0, s0, r));
    let input = dir.path().join("four.csv");
    write_transitions(fs::File::create(&input).unwrap(), &rows).unwrap();
    let csv = dir.path().join("report.csv");
    let text = ok(&["evaluate", "--input", s(&input), "--checkpoint", s(&ck), "--output", s(&csv), "--no-timestamp"]);
    assert!(!text.contains("Generated:"));
    let report = fs::read_to_string(&csv).unwrap();
    let line = |group: &str| report.lines().find(|l| l.starts_with(group)).unwrap().to_string();
    assert_eq!(line("matched,"), "matched,,2,1,0.5,5");
    assert_eq!(line("deviated,"), "deviated,,2,1,0.5,2.5");
    assert_eq!(line("best_single_action,"), "best_single_action,1,1,1,1,5");

    let stamped = ok(&["evaluate", "--input", s(&input), "--checkpoint", s(&ck)]);
    let extra: Vec<&str> = stamped.lines().filter(|l| !text.lines().any(|t| t == *l)).collect();
    assert_eq!(extra.len(), 1);
    assert!(extra[0].starts_with("Generated: 20"));
}

#[test]
fn zero_epochs_saves_the_seeded_initialization() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("t.csv");
    synthetic_transitions(&input, 50, 4, 1);
    let ck = dir.path().join("m.bin");
    let hist = dir.path().join("h.csv");
    ok(&[
        "train",
        "--input",
        s(&input),
        "--checkpoint",
        s(&ck),
        "--history",
        s(&hist),
        "--epochs",
        "0",
        "--seed",
        "17",
    ]);
    let (model, train) = load_checkpoint(&ck).unwrap();
    let init = Mlp::new(&q_network_layers(Mode::DiscreteOnly, 12), 17).unwrap();
    assert_eq!(model.net.params(), init.params());
    assert_eq!(train.unwrap().epochs, 0);
    assert_eq!(fs::read_to_string(&hist).unwrap(), "epoch,loss,val_response_rate,val_mean_reward,lr\n");
}

#[test]
fn commands_are_idempotent() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("t.csv");
    synthetic_transitions(&input, 80, 5, 2);
    for mode in ["discrete", "mixed"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let ck = dir.path().join(format!("{mode}{run}.bin"));
            let hist = dir.path().join(format!("{mode}{run}.csv"));
            let base = ["--seed", "5", "--mode", mode, "--threads", if run == 0 { "1" } else { "4" }];
            ok(&[
                &base[..],
                &["train", "--input", s(&input), "--checkpoint", s(&ck), "--history", s(&hist), "--epochs", "2"],
            ]
            .concat());
            let report =
                ok(&[&base[..], &["evaluate", "--input", s(&input), "--checkpoint", s(&ck), "--no-timestamp"]]
                    .concat());
            let clv = ok(&[&base[..], &["clv", "--checkpoint", s(&ck), "--state", "2,1,15,1,3"]].concat());
            let curves = ok(&[
                &base[..],
                &[
                    "curves",
                    "--checkpoint",
                    s(&ck),
                    "--dims",
                    "recency,if",
                    "--range",
                    "0:10,0:12",
                    "--resolution",
                    "7",
                ],
            ]
            .concat());
            outputs.push((
                fs::read(&ck).unwrap(),
                fs::read(dir.path().join(format!("{mode}{run}.bin.meta"))).unwrap(),
                fs::read(&hist).unwrap(),
                report,
                clv,
                curves,
            ));
        }
        assert!(outputs[0] == outputs[1], "{mode} runs differ");
        assert_eq!(outputs[0].5.lines().count(), 1 + 49);
    }
}

#[test]
fn dumped_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("t.csv");
    synthetic_transitions(&input, 60, 4, 3);
    let cfg = dir.path().join("run.cfg");
    let first = dir.path().join("a.bin");
    ok(&[
        "--seed",
        "9",
        "--dump-config",
        s(&cfg),
        "train",
        "--input",
        s(&input),
        "--checkpoint",
        s(&first),
        "--epochs",
        "2",
    ]);
    let dumped = fs::read_to_string(&cfg).unwrap();
    assert!(dumped.contains("seed=9") && dumped.contains("train.epochs=2"));

    // same config with only the checkpoint path changed
    let second = dir.path().join("b.bin");
    let cfg2 = dir.path().join("run2.cfg");
    fs::write(&cfg2, dumped.replace(s(&first), s(&second))).unwrap();
    ok(&["--config", s(&cfg2), "train"]);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn flags_override_config_values() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed=3\ncustomers=40\nagent.episodes=6\nagent.steps_per_burst=3\ntrain.batch_size=16\n").unwrap();
    let a = ok(&["--config", s(&cfg), "simulate"]);
    let b = ok(&["--config", s(&cfg), "--seed", "4", "simulate"]);
    let c = ok(&["--config", s(&cfg), "simulate", "--episodes", "4"]);
    assert_ne!(a, b);
    assert_eq!(a.lines().count(), 7);
    assert_eq!(c.lines().count(), 5);
    assert!(a.starts_with("episode,epsilon,mean_reward,response_rate,replay_size\n"));
    assert_eq!(ok(&["--config", s(&cfg), "simulate"]), a);
}

#[test]
fn shared_paths_are_rejected() {
    let r = clvdqn(&["train", "--input", "same.csv", "--checkpoint", "same.csv"]);
    assert_eq!(r.status.code(), Some(1));
}
