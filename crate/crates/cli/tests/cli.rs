//! End-to-end tests of the `cpl` binary: the generate / pretrain / train /
//! evaluate pipeline, exit codes, and run-to-run determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cpl")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn cpl binary")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SYNTH_CFG: &str = "n_entities = 60\nn_chains = 12\ncorpus_only_fraction = 0.5\nnoise_bags = 20\n";
const RUN_CFG: &str = "max_epochs = 3\nadaptive_epochs = 2\nrollouts_per_query = 2\nbeam_width = 8\npretrain_reasoner_epochs = 2\npretrain_extractor_epochs = 2\n";

/// Generates a small dataset under `dir/data` and returns the paths the run
/// commands need: (kg, corpus, combined queries, corpus-only queries).
fn gen_dataset(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let cfg = dir.join("synth.cfg");
    write(&cfg, SYNTH_CFG);
    let data = dir.join("data");
    run_ok(&[
        "gen-synthetic",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        data.to_str().unwrap(),
    ]);
    let kg = data.join("graph.tsv");
    let corpus = data.join("corpus.jsonl");
    let q_corpus = data.join("queries_corpus.tsv");
    let q_all = dir.join("queries_all.tsv");
    let mut combined = std::fs::read_to_string(data.join("queries_kg.tsv")).unwrap();
    combined.push_str(&std::fs::read_to_string(&q_corpus).unwrap());
    write(&q_all, &combined);
    (kg, corpus, q_all, q_corpus)
}

fn train_args(
    cfg: &Path,
    kg: &Path,
    corpus: &Path,
    train_q: &Path,
    valid_q: &Path,
    out: &Path,
) -> Vec<String> {
    [
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--kg",
        kg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--train-queries",
        train_q.to_str().unwrap(),
        "--valid-queries",
        valid_q.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (kg, corpus, q_all, q_corpus) = gen_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    write(&cfg, RUN_CFG);

    // The vocabulary files pin entity and relation ids for the whole dataset.
    assert!(kg.parent().unwrap().join("entities.tsv").is_file());
    assert!(kg.parent().unwrap().join("relations.tsv").is_file());

    for out in ["run-a", "run-b"] {
        let out = dir.path().join(out);
        let args = train_args(&cfg, &kg, &corpus, &q_all, &q_corpus, &out);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        run_ok(&args);
    }
    let a = std::fs::read(dir.path().join("run-a/seed-7/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("run-b/seed-7/metrics.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "identical seeds must produce identical metrics");
    let ra = std::fs::read(dir.path().join("run-a/seed-7/retained_edges.tsv")).unwrap();
    let rb = std::fs::read(dir.path().join("run-b/seed-7/retained_edges.tsv")).unwrap();
    assert_eq!(ra, rb);

    // Evaluate against the trained checkpoints and check the report shape.
    let eval_out = dir.path().join("eval");
    let stdout = run_ok(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "7",
        "--kg",
        kg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--test-queries",
        q_corpus.to_str().unwrap(),
        "--checkpoint",
        dir.path().join("run-a").to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("hits@1"), "missing header: {stdout}");
    assert!(stdout.contains("aggregate"), "missing aggregate row: {stdout}");
    assert!(eval_out.join("eval.csv").is_file());
    assert!(eval_out.join("manifest.json").is_file());
}

#[test]
fn pretrained_checkpoints_feed_training_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (kg, corpus, q_all, q_corpus) = gen_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    write(&cfg, RUN_CFG);
    let pre = dir.path().join("pre");

    run_ok(&[
        "pretrain-reasoner",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--kg",
        kg.to_str().unwrap(),
        "--train-queries",
        q_all.to_str().unwrap(),
        "--out",
        pre.to_str().unwrap(),
    ]);
    run_ok(&[
        "pretrain-extractor",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--kg",
        kg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        pre.to_str().unwrap(),
    ]);
    assert!(pre.join("seed-7/reasoner.ckpt").is_file());
    assert!(pre.join("seed-7/extractor.ckpt").is_file());

    let out = dir.path().join("joint");
    let mut args = train_args(&cfg, &kg, &corpus, &q_all, &q_corpus, &out);
    args.push("--checkpoint".into());
    args.push(pre.to_str().unwrap().into());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&args);
    assert!(out.join("seed-7/metrics.csv").is_file());

    let ts = dir.path().join("twostep");
    let stdout = run_ok(&[
        "baseline-two-step",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--kg",
        kg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--train-queries",
        q_all.to_str().unwrap(),
        "--valid-queries",
        q_corpus.to_str().unwrap(),
        "--threshold",
        "0.05",
        "--checkpoint",
        pre.to_str().unwrap(),
        "--out",
        ts.to_str().unwrap(),
    ]);
    assert!(stdout.contains("best threshold"), "{stdout}");
    assert!(ts.join("seed-7/two_step.csv").is_file());
}

#[test]
fn ablate_reasoner_only_needs_no_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (kg, _corpus, q_all, q_corpus) = gen_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    write(&cfg, RUN_CFG);
    let out = dir.path().join("abl");
    run_ok(&[
        "ablate",
        "--mode",
        "reasoner-only",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--kg",
        kg.to_str().unwrap(),
        "--train-queries",
        q_all.to_str().unwrap(),
        "--valid-queries",
        q_corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("seed-7/metrics.csv").is_file());
}

#[test]
fn grad_check_passes() {
    let stdout = run_ok(&["grad-check", "--seed", "3", "--trials", "2"]);
    assert!(stdout.starts_with("OK"), "{stdout}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(exit_code(&run(&["train", "--no-such-flag"])), 1);
    assert_eq!(exit_code(&run(&["no-such-command"])), 1);
    assert_eq!(exit_code(&run(&["--help"])), 0);
}

#[test]
fn bad_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (kg, _corpus, q_all, _q_corpus) = gen_dataset(dir.path());
    let cfg = dir.path().join("bad.cfg");
    write(&cfg, "no_such_setting = 5\n");
    let out = run(&[
        "pretrain-reasoner",
        "--config",
        cfg.to_str().unwrap(),
        "--kg",
        kg.to_str().unwrap(),
        "--train-queries",
        q_all.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_setting"));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "pretrain-reasoner",
        "--kg",
        dir.path().join("absent.tsv").to_str().unwrap(),
        "--train-queries",
        dir.path().join("absent.tsv").to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn checkpoint_config_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (kg, corpus, q_all, q_corpus) = gen_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    write(&cfg, RUN_CFG);
    let pre = dir.path().join("pre");
    run_ok(&[
        "pretrain-reasoner",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--kg",
        kg.to_str().unwrap(),
        "--train-queries",
        q_all.to_str().unwrap(),
        "--out",
        pre.to_str().unwrap(),
    ]);
    let other = dir.path().join("other.cfg");
    write(&other, "max_epochs = 4\n");
    let mut args = train_args(&other, &kg, &corpus, &q_all, &q_corpus, &dir.path().join("x"));
    args.push("--checkpoint".into());
    args.push(pre.to_str().unwrap().into());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run(&args);
    assert_ne!(exit_code(&out), 0);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config"), "{stderr}");
}
