use std::path::Path;
use std::process::{Command, Output};

use contextguard_core::config::RunConfig;
use contextguard_core::model::save_checkpoint;
use serde_json::Value;

const SMALL: [&str; 8] = [
    "--set",
    "preset=tiny",
    "--set",
    "data.n_consistent=40",
    "--set",
    "data.n_inconsistent=40",
    "--set",
    "train.epochs=1",
];

fn cli(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contextguard"))
        .current_dir(cwd)
        .env_remove("CONTEXTGUARD_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = cli(cwd, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL).collect()
}

#[test]
fn oracle_eval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen", "--seed", "4"]));
    ok(dir.path(), &with_small(&["eval", "--seed", "4", "--oracle"]));
    for name in ["entity", "ctxt"] {
        let text = std::fs::read_to_string(dir.path().join(format!("runs/eval/{name}.jsonl"))).unwrap();
        let mut seen = 0;
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            let Some(x) = v["value"].as_f64() else { continue };
            seen += 1;
            if v["metric"] == "accuracy" {
                assert_eq!(x, 1.0, "{line}");
            } else {
                // Zero only where the group holds no inconsistent pair.
                assert!(x == 1.0 || x == 0.0, "{line}");
            }
        }
        assert!(seen > 0);
    }
}

#[test]
fn zero_epochs_store_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen", "--seed", "6"]));
    ok(dir.path(), &with_small(&["train", "--seed", "6", "--epochs", "0"]));

    let mut c = RunConfig::default();
    c.apply_preset("tiny").unwrap();
    c.seed = 6;
    let init = c.init_model(c.variant(), &c.world(), 6).unwrap();
    let expected = dir.path().join("init.jsonl");
    save_checkpoint(&init.params, &expected).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("runs/train/checkpoint.jsonl")).unwrap(),
        std::fs::read(expected).unwrap()
    );
    assert!(std::fs::read_to_string(dir.path().join("runs/train/stats.jsonl")).unwrap().is_empty());
}

#[test]
fn ablate_emits_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_small(&["ablate", "--seed", "2"]);
    args.extend(["--set", "eval.seeds=2"]);
    ok(dir.path(), &args);
    let text = std::fs::read_to_string(dir.path().join("runs/ablate/ablation.jsonl")).unwrap();
    let names: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["full", "w/o FCCR", "w/o RL/Adv", "w/o both"]);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["outcomes"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn settings_resolve_in_order() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "seed = 3\ntrain.epochs = 7\n").unwrap();
    ok(
        dir.path(),
        &["gen", "--config", "run.cfg", "--set", "train.epochs=9", "--set", "seed=8", "--seed", "5", "--set", "preset=tiny"],
    );
    let text = std::fs::read_to_string(dir.path().join("runs/gen/config.txt")).unwrap();
    assert!(text.lines().any(|l| l == "seed = 5"), "{text}");
    assert!(text.lines().any(|l| l == "train.epochs = 9"), "{text}");
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| cli(dir.path(), args).status.code();
    assert_eq!(code(&["gen", "--set", "no.such.key=1"]), Some(2));
    assert_eq!(code(&["gen", "--set", "data.difficulty=1.5"]), Some(2));
    assert_eq!(code(&["bogus"]), Some(2));
    assert_eq!(code(&["train"]), Some(2), "missing corpus is a configuration error");
    std::fs::create_dir_all(dir.path().join("runs/gen")).unwrap();
    std::fs::write(dir.path().join("runs/gen/corpus.jsonl"), "not json\n").unwrap();
    assert_eq!(code(&["train"]), Some(3));
}
