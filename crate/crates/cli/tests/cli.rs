use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_motion-fatigue"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn motion-fatigue")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path) -> Value {
    let text = fs::read_to_string(dir.join("run_manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const PROFILES: &str =
    r#"[{"joint":"elbow","F":0.00912,"R":0.00094,"LD":10,"LR":10,"lambda":0.5}]"#;

#[test]
fn sim_to_stdout_conserves_capacity() {
    let out = ok(&["sim-3cc", "--tl", "const:100", "--t", "60"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (a, f, r) = (col("M_A"), col("M_F"), col("M_R"));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[a] + v[f] + v[r] - 100.0).abs() < 1e-6);
        rows += 1;
    }
    assert!(rows > 1000);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed: 0"));
}

#[test]
fn sim_writes_manifest_with_hash_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sim");
    ok(&["sim-3cc", "--t", "10", "--out", s(&dir)]);
    assert!(dir.join("trajectory.csv").exists());
    let m = manifest(&dir);
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["command"], "sim-3cc");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["sim-3cc", "--dt", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["sim-3cc", "--tl", "ramp:3"]).status.code(), Some(1));

    let missing = tmp.path().join("missing.csv");
    assert_eq!(
        run(&["eval", "--pred", s(&missing), "--truth", s(&missing)]).status.code(),
        Some(2)
    );

    let pred = tmp.path().join("pred.csv");
    let truth = tmp.path().join("truth.csv");
    fs::write(&pred, "# dt=0.1\nelbow\n1.0\n2.0\n3.0\n").unwrap();
    fs::write(&truth, "# dt=0.1\nelbow\n1.0\n1.0\n1.0\n").unwrap();
    assert_eq!(
        run(&["eval", "--pred", s(&pred), "--truth", s(&truth)]).status.code(),
        Some(3)
    );
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "# dt=0.1\nelbow\n1.0\nNaN\n3.0\n").unwrap();
    assert_eq!(
        run(&["eval", "--pred", s(&bad), "--truth", s(&pred)]).status.code(),
        Some(2)
    );
}

#[test]
fn eval_scores_and_rejects_length_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let pred = tmp.path().join("pred.csv");
    let truth = tmp.path().join("truth.csv");
    let short = tmp.path().join("short.csv");
    fs::write(&pred, "# dt=0.1\nelbow\n1.0\n2.0\n3.0\n").unwrap();
    fs::write(&truth, "# dt=0.1\nshoulder,elbow\n0.0,1.0\n0.0,2.0\n0.0,3.0\n").unwrap();
    fs::write(&short, "# dt=0.1\nelbow\n1.0\n2.0\n").unwrap();

    let dir = tmp.path().join("eval");
    let out = ok(&["eval", "--pred", s(&pred), "--truth", s(&truth), "--out", s(&dir)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().nth(1), Some("elbow,0,1"));
    assert!(dir.join("metrics.json").exists());
    assert_eq!(manifest(&dir)["command"], "eval");

    let out = run(&["eval", "--pred", s(&short), "--truth", s(&truth)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_pinn_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&["train-pinn", "--epochs", "5", "--seed", "3", "--out", s(dir)]);
    }
    let ckpt = |d: &Path| fs::read_to_string(d.join("checkpoint.ckpt.json")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b));
    assert_eq!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
    assert_eq!(manifest(&a)["seed"], 3);
    let metrics: Value =
        serde_json::from_str(&fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics.is_object());
}

#[test]
fn train_pinn_without_rates_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train-pinn", "--joint", "knee", "--out", s(&tmp.path().join("k"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_to_surrogates_to_fatigued_motion() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name);
    let data = p("data");
    ok(&["gen-data", "--out", s(&data), "--trials", "5", "--frames", "40", "--seed", "1"]);
    let m = manifest(&data);
    assert_eq!(m["seed"], 1);
    assert_eq!(m["command"], "gen-data");
    assert!(data.join("trial_004_angles.csv").exists());

    let id = p("id");
    let fd = p("fd");
    ok(&["train-dyn", "--data", s(&data), "--role", "id", "--epochs", "2", "--out", s(&id)]);
    ok(&["train-dyn", "--data", s(&data), "--role", "fd", "--epochs", "2", "--out", s(&fd)]);
    assert!(id.join("id_shoulder.ckpt.json").exists());
    assert!(fd.join("fd_elbow.ckpt.json").exists());
    assert_ne!(manifest(&id)["config_hash"], manifest(&fd)["config_hash"]);

    let bad = run(&["train-dyn", "--data", s(&data), "--role", "id", "--joint", "wrist", "--out", s(&p("x"))]);
    assert_eq!(bad.status.code(), Some(2));

    let profiles = p("profiles.json");
    fs::write(&profiles, PROFILES).unwrap();
    let motion = data.join("trial_000_angles.csv");
    let app = p("app");
    ok(&[
        "apply-fatigue", "--motion", s(&motion), "--profiles", s(&profiles),
        "--models", s(&id), "--models", s(&fd), "--mode", "fixed:80", "--out", s(&app),
    ]);
    for f in ["fatigued.csv", "baseline.csv", "torque.csv", "modulated_torque.csv", "report.json"] {
        assert!(app.join(f).exists(), "{f}");
    }
    assert_eq!(manifest(&app)["command"], "apply-fatigue");

    let curves = p("curves");
    ok(&[
        "export-curves", "--motion", s(&motion), "--profiles", s(&profiles),
        "--models", s(&id), "--models", s(&fd), "--levels", "100,80", "--out", s(&curves),
    ]);
    let summary = fs::read_to_string(curves.join("summary.csv")).unwrap();
    assert!(summary.contains("fixed100,elbow"));
    assert!(summary.contains("dynamic,elbow"));

    ok(&["eval", "--pred", s(&app.join("fatigued.csv")), "--truth", s(&motion)]);
}
