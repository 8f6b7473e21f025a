use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn swreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swreg"))
        .args(args)
        .env("SWREG_THREADS", "1")
        .output()
        .expect("spawn swreg")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_ok(args: &[&str]) {
    let out = swreg(args);
    assert!(
        out.status.success(),
        "swreg {args:?} exited {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-data, train and evaluate into `root`, returning (data, run) dirs.
fn pipeline(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let run = root.join("run");
    run_ok(&[
        "gen-data",
        "--config",
        s(&config("phantom_small.json")),
        "--out",
        s(&data),
    ]);
    run_ok(&[
        "train",
        "--config",
        s(&config("train_small.json")),
        "--data",
        s(&data),
        "--out",
        s(&run),
    ]);
    run_ok(&[
        "evaluate",
        "--ckpt",
        s(&run.join("final.ckpt")),
        "--data",
        s(&data),
        "--out",
        s(&run),
    ]);
    (data, run)
}

#[test]
fn pipeline_runs_end_to_end_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (data, run) = pipeline(a.path());
    let (_, run_b) = pipeline(b.path());

    for name in [
        "train_log.csv",
        "eval.csv",
        "eval_summary.csv",
        "final.ckpt",
    ] {
        let x = std::fs::read(run.join(name)).unwrap();
        let y = std::fs::read(run_b.join(name)).unwrap();
        assert!(!x.is_empty(), "{name} is empty");
        assert_eq!(x, y, "{name} differs between identical runs");
    }

    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,phase,mode,alpha,gamma,steps,weak_loss,consistency_loss,total_loss,rng_state"
    );
    assert_eq!(lines.count(), 6);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    for (cmd, artifact) in [("train", "train_log.csv"), ("evaluate", "eval.csv")] {
        let entry = &manifest["commands"][cmd];
        assert_eq!(entry["config_sha256"].as_str().unwrap().len(), 64);
        assert!(
            entry["artifacts"][artifact].is_string(),
            "{cmd} manifest lacks {artifact}"
        );
    }
    assert_eq!(manifest["commands"]["train"]["seed"], 0);

    let atlas = a.path().join("atlas");
    run_ok(&[
        "atlas",
        "--ckpt",
        s(&run.join("final.ckpt")),
        "--data",
        s(&data),
        "--out",
        s(&atlas),
    ]);
    for name in [
        "atlas.ddfv",
        "probability.ddfv",
        "atlas_history.csv",
        "members.json",
    ] {
        assert!(atlas.join(name).is_file(), "atlas output {name} missing");
    }
    let div = a.path().join("div");
    run_ok(&[
        "diversity",
        "--data",
        s(&data),
        "--atlas",
        s(&atlas),
        "--out",
        s(&div),
        "--fraction",
        "0.25",
    ]);
    assert!(div.join("diversity_summary.csv").is_file());

    let slices = a.path().join("slices");
    run_ok(&[
        "render-slice",
        "--input",
        s(&atlas.join("atlas.ddfv")),
        "--out",
        s(&slices),
        "--z",
        "4",
    ]);
    let pgm = std::fs::read(slices.join("atlas_z004_c0.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), b"P5\n16 16\n255\n".len() + 256);
}

#[test]
fn seed_override_changes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&[
        "gen-data",
        "--config",
        s(&config("phantom_small.json")),
        "--out",
        s(&a),
    ]);
    run_ok(&[
        "gen-data",
        "--config",
        s(&config("phantom_small.json")),
        "--out",
        s(&b),
        "--seed",
        "99",
    ]);
    let x = std::fs::read(a.join("subject_000.image.ddfv")).unwrap();
    let y = std::fs::read(b.join("subject_000.image.ddfv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn check_suites_pass() {
    for suite in ["compose", "augment", "metrics", "atlas"] {
        let out = swreg(&["check", "--suite", suite]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(0), "suite {suite}:\n{stdout}");
        assert!(
            stdout.lines().all(|l| l.starts_with("PASS ")),
            "suite {suite}:\n{stdout}"
        );
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(swreg(&["bogus"]).status.code(), Some(2));
    assert_eq!(swreg(&["train", "--data", "x"]).status.code(), Some(2));
    assert_eq!(swreg(&["check", "--suite", "nope"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_swreg"))
        .args(["check", "--suite", "metrics"])
        .env("SWREG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = swreg(&[
        "gen-data",
        "--config",
        s(&missing),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ \"dims\": ").unwrap();
    let out = swreg(&[
        "gen-data",
        "--config",
        s(&broken),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let unknown = dir.path().join("unknown.json");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(config("train_small.json")).unwrap())
            .unwrap();
    cfg["learning_rate"] = serde_json::json!(1.0);
    std::fs::write(&unknown, cfg.to_string()).unwrap();
    let out = swreg(&[
        "train",
        "--config",
        s(&unknown),
        "--data",
        s(dir.path()),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let junk = dir.path().join("junk.ddfv");
    std::fs::write(&junk, b"NOTADDFVFILE....").unwrap();
    let out = swreg(&["render-slice", "--input", s(&junk), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(5));
}
