//! End-to-end tests of the `poirec` binary: stage chaining, determinism of
//! the emitted CSVs, and the documented exit codes.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_poirec");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cfg.toml");
    std::fs::write(
        &path,
        r#"
[data]
slot_hours = 8
region_k = 3
train_fraction = 0.8

[transr]
dim_d = 6
dim_k = 6
epochs = 10
learning_rate = 0.01
batch_size = 64

[extraction]
theta_d_km = 200.0

[mf]
latent_dim = 4
epochs = 40

[eval]
exclude_train_visited = false
"#,
    )
    .unwrap();
    path
}

/// Runs synth + the five pipeline stages + evaluate into `out`.
fn run_pipeline(dir: &Path, out: &str, seed: &str) {
    run_ok(
        dir,
        &[
            "synth", "--users", "10", "--pois", "20", "--regions", "3", "--slots", "3",
            "--checkins-per-user", "15", "--out", "checkins.csv", "--seed", seed,
        ],
    );
    let cfg = dir.join("cfg.toml");
    let cfg = cfg.to_str().unwrap();
    for stage in [
        vec!["ingest", "--input", "checkins.csv"],
        vec!["build-graph"],
        vec!["train-embed"],
        vec!["extract"],
        vec!["train-mf"],
        vec!["evaluate", "--k", "1,5,10"],
    ] {
        let mut args = stage.clone();
        args.extend(["--config", cfg, "--out-dir", out]);
        run_ok(dir, &args);
    }
}

#[test]
fn pipeline_stages_chain_and_reproduce_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    run_pipeline(dir.path(), "out_a", "5");
    run_pipeline(dir.path(), "out_b", "5");

    for artifact in [
        "train.csv",
        "test.csv",
        "regions.json",
        "entities.tsv",
        "relations.tsv",
        "triples.tsv",
        "transr.json",
        "loss_trace.csv",
        "candidates.tsv",
        "factors.json",
        "metrics.csv",
        "metrics_per_user.csv",
    ] {
        let a = std::fs::read(dir.path().join("out_a").join(artifact)).unwrap();
        let b = std::fs::read(dir.path().join("out_b").join(artifact)).unwrap();
        assert_eq!(a, b, "artifact {artifact} differs between identical runs");
    }

    let metrics = std::fs::read_to_string(dir.path().join("out_a/metrics.csv")).unwrap();
    assert!(metrics.starts_with("k,prec,rec,f1\n"));
    assert_eq!(metrics.lines().count(), 4, "header plus one row per cutoff");
}

#[test]
fn recommend_prints_and_saves_ranked_pois() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    run_pipeline(dir.path(), "out", "7");
    let cfg = dir.path().join("cfg.toml");
    let stdout = run_ok(
        dir.path(),
        &[
            "recommend", "--user", "u1", "--lat", "-36.0", "--lon", "-70.0", "--time",
            "1301000000", "--k", "4", "--config", cfg.to_str().unwrap(), "--out-dir", "out",
        ],
    );
    assert_eq!(stdout.lines().count(), 4);
    let tsv = std::fs::read_to_string(dir.path().join("out/recommendations.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 4);
    let first = tsv.lines().next().unwrap();
    assert!(first.starts_with("1\tp"), "rank, poi_key, score: {first}");
}

#[test]
fn sweeps_and_sparsity_emit_schema_stable_csvs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    run_pipeline(dir.path(), "out", "9");
    let cfg = dir.path().join("cfg.toml");
    let cfg = cfg.to_str().unwrap();

    run_ok(dir.path(), &["sweep-timeslot", "--hours", "8,24", "--config", cfg, "--out-dir", "out"]);
    let csv = std::fs::read_to_string(dir.path().join("out/sweep_timeslot.csv")).unwrap();
    assert!(csv.starts_with("hours,prec@1,prec@10,prec@20,rec@1,rec@10,rec@20\n"));
    assert_eq!(csv.lines().count(), 3);

    run_ok(dir.path(), &["sweep-dim", "--dims", "4,6", "--config", cfg, "--out-dir", "out"]);
    let csv = std::fs::read_to_string(dir.path().join("out/sweep_dim.csv")).unwrap();
    assert!(csv.starts_with("d,prec@1,"));
    assert_eq!(csv.lines().count(), 3);

    run_ok(dir.path(), &["sparsity", "--fractions", "0,0.3", "--config", cfg, "--out-dir", "out"]);
    let csv = std::fs::read_to_string(dir.path().join("out/sparsity.csv")).unwrap();
    assert!(csv.starts_with("fraction,prec@10,rec@10,f1@10\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[transr]\nmargin = -2.0\n").unwrap();
    let out = run(dir.path(), &["build-graph", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown keys are config errors too.
    std::fs::write(dir.path().join("typo.toml"), "[data]\nslot_hourz = 4\n").unwrap();
    let out = run(dir.path(), &["build-graph", "--config", "typo.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let out = run(dir.path(), &["ingest", "--input", "missing.csv", "--config", "cfg.toml"]);
    assert_eq!(out.status.code(), Some(3));

    // Evaluate with no artifacts in the out dir.
    let out = run(dir.path(), &["evaluate", "--config", "cfg.toml", "--out-dir", "empty"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    run_pipeline(dir.path(), "out", "3");
    // An absurd factorization step size reliably overflows the objective.
    std::fs::write(
        dir.path().join("diverge.toml"),
        r#"
[data]
slot_hours = 8
region_k = 3

[transr]
dim_d = 6
dim_k = 6
epochs = 1

[extraction]
theta_d_km = 200.0

[mf]
latent_dim = 4
epochs = 50
learning_rate = 1e6
"#,
    )
    .unwrap();
    let out = run(dir.path(), &["train-mf", "--config", "diverge.toml", "--out-dir", "out"]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["synth", "--users", "5", "--pois", "10", "--regions", "2", "--out", "a.csv", "--seed", "11"]);
    run_ok(dir.path(), &["synth", "--users", "5", "--pois", "10", "--regions", "2", "--out", "b.csv", "--seed", "11"]);
    run_ok(dir.path(), &["synth", "--users", "5", "--pois", "10", "--regions", "2", "--out", "c.csv", "--seed", "12"]);
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    let c = std::fs::read(dir.path().join("c.csv")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
