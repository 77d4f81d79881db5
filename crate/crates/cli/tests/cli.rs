use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tvs::analysis::bound_theorem1;

fn tvs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvs"))
        .current_dir(dir)
        .env_remove("TVS_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tvs(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = tvs(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err}");
    assert!(!err.contains("panicked"), "{err}");
    err
}

#[test]
fn gen_data_then_offline_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-data", "--setup", "friedman", "--n", "150", "--p", "40", "--seed", "2", "--out", "data"]);
    fs::write(dir.join("run.toml"), "feedback = \"forest\"\nhorizon = 60\n").unwrap();
    ok(dir, &["run-offline", "--config", "run.toml", "--data", "data/data.csv", "--out", "run"]);
    for f in ["summary.json", "trajectory.csv", "config.used.toml"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run/summary.json")).unwrap()).unwrap();
    let selected = summary["selected"].as_array().unwrap();
    assert!(selected.iter().all(|v| v.as_u64().unwrap() < 40));
    assert_eq!(summary["p"], 40);
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("run.toml"),
        "feedback = \"lasso\"\nsetup = \"linear\"\np = 25\nn = 100\nhorizon = 50\nseed = 4\n",
    )
    .unwrap();
    ok(dir, &["run-offline", "--config", "run.toml", "--out", "a"]);
    ok(dir, &["run-offline", "--config", "run.toml", "--out", "b"]);
    let traj = |d: &str| fs::read(dir.join(d).join("trajectory.csv")).unwrap();
    assert_eq!(traj("a"), traj("b"));

    // the echoed config reproduces the run
    ok(dir, &["run-offline", "--config", "a/config.used.toml", "--out", "c"]);
    assert_eq!(traj("a"), traj("c"));

    ok(dir, &["run-offline", "--config", "run.toml", "--replications", "3", "--workers", "1", "--out", "r1"]);
    ok(dir, &["run-offline", "--config", "run.toml", "--replications", "3", "--workers", "3", "--out", "r3"]);
    for k in 0..3 {
        let rep = format!("rep_{k:04}");
        assert_eq!(traj(&format!("r1/{rep}")), traj(&format!("r3/{rep}")));
    }
}

#[test]
fn regret_sim_is_worker_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("sim.toml"), "feedback = \"bernoulli\"\np = 12\nnum_signals = 3\nhorizon = 300\n").unwrap();
    ok(dir, &["regret-sim", "--config", "sim.toml", "--replications", "5", "--workers", "1", "--out", "w1"]);
    ok(dir, &["regret-sim", "--config", "sim.toml", "--replications", "5", "--workers", "4", "--out", "w4"]);
    for f in ["regret_mean.csv", "reg_0000.csv", "reg_0004.csv"] {
        let a = fs::read(dir.join("w1").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.join("w4").join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(dir.join("w1/reg_0002.csv")).unwrap();
    assert!(text.starts_with("t,reg\n"));
    assert_eq!(text.lines().count(), 301);
}

#[test]
fn online_run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("online.toml"),
        "feedback = \"lasso\"\nsetup = \"liang\"\np = 30\nn = 2000\nbatch_size = 100\nrounds = 2\n",
    )
    .unwrap();
    let stdout = ok(dir, &["run-online", "--config", "online.toml", "--out", "on"]);
    assert!(stdout.contains("40 iterations"), "{stdout}");
    let used = fs::read_to_string(dir.join("on/config.used.toml")).unwrap();
    assert!(used.contains("mode = \"online\""));
}

#[test]
fn bounds_match_library() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        tmp.path(),
        &[
            "bounds", "theorem1", "--alpha", "0.25", "--p", "10", "--q-star", "3", "--horizon", "1000",
            "--delta-max", "1", "--c1", "1", "--c2", "1",
        ],
    );
    let printed: f64 = out.trim().parse().unwrap();
    assert_eq!(printed, bound_theorem1(0.25, 10, 3, 1000.0, 1.0, 1.0, 1.0).unwrap());
    let out = ok(
        tmp.path(),
        &["bounds", "lemma2", "--gaps", "1:0.4", "--horizon", "2.718281828459045", "--epsilon", "0.1", "--p", "2"],
    );
    assert!((out.trim().parse::<f64>().unwrap() - 11.5).abs() < 1e-12);
    let out = ok(tmp.path(), &["bounds", "kl", "--a", "0.5", "--b", "0.7"]);
    assert!((out.trim().parse::<f64>().unwrap() - 0.087_176_693_6).abs() < 1e-9);
}

#[test]
fn metrics_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["metrics", "--selected", "1,2,3,9", "--truth", "1,2,3,4,5", "--p", "10"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["fdp"], 0.25);
    assert_eq!(v["power"], 0.6);
    assert_eq!(v["hamming"], 3);
}

#[test]
fn bad_input_gives_one_line_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), "horizon = 10\nbogus = 1\nalso_bad = true\n").unwrap();
    let err = fail(dir, &["run-offline", "--config", "bad.toml"]);
    assert!(err.contains("bogus") && err.contains("also_bad"), "{err}");
    let err = fail(dir, &["run-offline", "--data", "missing.csv"]);
    assert!(err.contains("missing.csv"), "{err}");
    let err = fail(dir, &["run-offline", "--config", "nope.toml"]);
    assert!(err.contains("nope.toml"), "{err}");
    fail(dir, &["bounds", "theorem1", "--alpha", "0.7", "--p", "1", "--q-star", "1", "--horizon", "5", "--delta-max", "1"]);
    fail(dir, &["bounds", "lemma2", "--gaps", "3:0.1", "--horizon", "5", "--epsilon", "0.1", "--p", "4"]);
    fail(dir, &["metrics", "--selected", "12", "--p", "10"]);
    fs::write(dir.join("broken.csv"), "200,3,1,friedman,support=0\n1,2\n").unwrap();
    let err = fail(dir, &["run-offline", "--data", "broken.csv"]);
    assert!(err.contains("broken.csv"), "{err}");
    fs::write(dir.join("online.toml"), "p = 5\n").unwrap();
    fail(dir, &["run-online", "--config", "online.toml"]);
}
