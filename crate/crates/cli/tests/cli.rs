use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use onsager::nets::{OdeNet, OnsagerConfig, OnsagerNet};
use onsager::train::TrainConfig;
use onsager_cli::checkpoint::{Checkpoint, TrainingSummary, FORMAT_VERSION};
use onsager_cli::RunConfig;
use tempfile::TempDir;

fn onsagernet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onsagernet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

/// Ten short pendulum trajectories and a fast training protocol.
const SMALL: &str = r#"{
    "dataset": {"n_traj": 10, "snapshots_per_traj": 20},
    "train": {"epochs": 20, "batch_size": 50}
}"#;

fn generate(dir: &Path, config: &Path, name: &str, seed: &str) -> PathBuf {
    let csv = dir.join(name);
    let out = onsagernet(&[
        "--config",
        path_str(config),
        "--seed",
        seed,
        "--out",
        path_str(&csv),
        "generate",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    csv
}

fn save_checkpoint(dir: &Path, model: OdeNet) -> PathBuf {
    let ck = Checkpoint {
        format_version: FORMAT_VERSION,
        model,
        reducer: None,
        train: TrainConfig::default(),
        dataset_fingerprint: String::new(),
        seed: 0,
        summary: TrainingSummary::default(),
    };
    let p = dir.join("handmade.json");
    ck.save(&p).unwrap();
    p
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn default_generate_writes_ten_thousand_pairs() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("pendulum.csv");
    let out = onsagernet(&["--out", path_str(&csv), "generate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("traj_id,t1,h1_0,h1_1,h2_0,h2_1"));
    assert_eq!(text.lines().count(), 1 + 10_000);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pendulum.json")).unwrap()).unwrap();
    assert_eq!(meta["tau"], 0.001);
    assert_eq!(meta["n_train_traj"], 80);
    assert_eq!(meta["system"]["kind"], "pendulum");
}

#[test]
fn empty_dataset_has_a_header() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"dataset": {"n_traj": 0}}"#);
    let csv = generate(dir.path(), &cfg, "empty.csv", "0");
    assert_eq!(
        std::fs::read_to_string(csv).unwrap(),
        "traj_id,t1,h1_0,h1_1,h2_0,h2_1\n"
    );
}

#[test]
fn generation_is_byte_identical_per_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let a = std::fs::read(generate(dir.path(), &cfg, "a.csv", "4")).unwrap();
    let b = std::fs::read(generate(dir.path(), &cfg, "b.csv", "4")).unwrap();
    let c = std::fs::read(generate(dir.path(), &cfg, "c.csv", "5")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_configs_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("x.csv");
    for (name, json) in [
        ("unknown.json", r#"{"datset": {}}"#),
        ("tau.json", r#"{"dataset": {"tau": 0.5, "snapshots_per_traj": 100}}"#),
        ("syntax.json", r#"{"dataset": "#),
    ] {
        let cfg = write_config(dir.path(), name, json);
        let out = onsagernet(&["--config", path_str(&cfg), "--out", path_str(&csv), "generate"]);
        assert_eq!(code(&out), 2, "{name}: {}", stderr(&out));
    }
    let out = onsagernet(&[
        "--config",
        "/nonexistent/config.json",
        "--out",
        path_str(&csv),
        "generate",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn zero_epochs_store_the_initialisation() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(
        dir.path(),
        "c.json",
        r#"{"dataset": {"n_traj": 3, "snapshots_per_traj": 5}, "train": {"epochs": 0}}"#,
    );
    let csv = generate(dir.path(), &cfg_path, "d.csv", "7");
    let run = dir.path().join("run");
    let out = onsagernet(&[
        "--config",
        path_str(&cfg_path),
        "--seed",
        "7",
        "--out",
        path_str(&run),
        "train",
        "--data",
        path_str(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ck = Checkpoint::load(&run.join("checkpoint.json")).unwrap();
    let mut cfg = RunConfig::load(Some(&cfg_path)).unwrap();
    cfg.seed = 7;
    assert_eq!(ck.model, cfg.build_model(2).unwrap());
    assert!(ck.summary.history.is_empty());
    assert_eq!(
        std::fs::read_to_string(run.join("history.csv")).unwrap(),
        "epoch,train_loss,test_loss,lr\n"
    );
}

#[test]
fn corrupted_header_names_the_column() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let csv = generate(dir.path(), &cfg, "d.csv", "0");
    let text = std::fs::read_to_string(&csv).unwrap().replacen("h2_0", "h2_O", 1);
    std::fs::write(&csv, text).unwrap();
    let out = onsagernet(&[
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&dir.path().join("run")),
        "train",
        "--data",
        path_str(&csv),
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("`h2_0`") && stderr(&out).contains("`h2_O`"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn train_rollout_analyze_and_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let csv = generate(dir.path(), &cfg, "d.csv", "1");
    let train = |name: &str| {
        let run = dir.path().join(name);
        let out = onsagernet(&[
            "--config",
            path_str(&cfg),
            "--seed",
            "1",
            "--out",
            path_str(&run),
            "train",
            "--data",
            path_str(&csv),
            "--quiet",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        run
    };
    let run = train("run");
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 20);
    // single-threaded training is reproducible to the byte
    let again = train("again");
    assert_eq!(
        std::fs::read(run.join("checkpoint.json")).unwrap(),
        std::fs::read(again.join("checkpoint.json")).unwrap()
    );

    let ck = run.join("checkpoint.json");
    let out = onsagernet(&["rollout", "--checkpoint", path_str(&ck), "--h0", "1,1", "--t-end", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv_text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv_text.lines().next(), Some("t,h_0,h_1,energy"));
    let traj = rows(&csv_text);
    assert_eq!(traj.len(), 2001);
    let dt: f64 = 1e-3;
    for w in traj.windows(2) {
        assert!(w[1].iter().all(|x| x.is_finite()));
        assert!(
            w[1][3] <= w[0][3] + 1e-8 + 10.0 * dt.powi(3),
            "energy rose at t = {}",
            w[1][0]
        );
    }

    let report = dir.path().join("analysis.json");
    let out = onsagernet(&[
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&report),
        "analyze",
        "--checkpoint",
        path_str(&ck),
        "--data",
        path_str(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let analysis: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(!analysis["fixed_points"].as_array().unwrap().is_empty());
    assert_eq!(analysis["lyapunov_exponents"].as_array().unwrap().len(), 2);

    let out = onsagernet(&[
        "export-report",
        "--checkpoint",
        path_str(&ck),
        "--analysis",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["model_kind"], "onsager");
    assert_eq!(summary["param_count"], 118);
    assert_eq!(summary["epochs_run"], 20);
    assert_eq!(summary["seed"], 1);
    assert!(summary["mse_test"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["analysis"]["positive_exponent"], analysis["positive_exponent"]);

    // a different dataset does not match the checkpoint
    let other = generate(dir.path(), &cfg, "other.csv", "2");
    let out = onsagernet(&["analyze", "--checkpoint", path_str(&ck), "--data", path_str(&other)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("fingerprint"), "{}", stderr(&out));
}

#[test]
fn zero_field_has_one_fixed_point_at_the_origin() {
    let dir = TempDir::new().unwrap();
    let mut cfg = OnsagerConfig::small_unforced(2);
    cfg.alpha = 0.5;
    cfg.beta = 0.2;
    let ck = save_checkpoint(dir.path(), OdeNet::Onsager(OnsagerNet::zeros(&cfg)));
    let out = onsagernet(&["analyze", "--checkpoint", path_str(&ck)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let fps = report["fixed_points"].as_array().unwrap();
    assert_eq!(fps.len(), 1);
    for x in fps[0]["location"].as_array().unwrap() {
        assert!(x.as_f64().unwrap().abs() < 1e-9, "{x}");
    }
    assert_eq!(fps[0]["stability"], "stable");
}

#[test]
fn missing_checkpoint_exits_with_code_2() {
    let out = onsagernet(&["analyze", "--checkpoint", "/nonexistent/checkpoint.json"]);
    assert_eq!(code(&out), 2);
    let out = onsagernet(&[
        "rollout",
        "--checkpoint",
        "/nonexistent/checkpoint.json",
        "--h0",
        "0",
        "--t-end",
        "1",
    ]);
    assert_eq!(code(&out), 2);
}

/// `V = β‖h‖²` and `M̃ = αI`, so `ḣ = −2αβ h = −h`.
fn unit_decay() -> OdeNet {
    let mut cfg = OnsagerConfig::small_unforced(1);
    cfg.alpha = 1.0;
    cfg.beta = 0.5;
    OdeNet::Onsager(OnsagerNet::zeros(&cfg))
}

#[test]
fn rollout_of_unit_decay() {
    let dir = TempDir::new().unwrap();
    let ck = save_checkpoint(dir.path(), unit_decay());
    let out = onsagernet(&[
        "rollout",
        "--checkpoint",
        path_str(&ck),
        "--h0",
        "1",
        "--t-end",
        "1",
        "--dt",
        "1e-3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let traj = rows(&String::from_utf8(out.stdout).unwrap());
    let last = traj.last().unwrap();
    assert!((last[0] - 1.0).abs() < 1e-12);
    assert!((last[1] - (-1.0f64).exp()).abs() < 1e-4, "h(1) = {}", last[1]);

    let out = onsagernet(&[
        "rollout",
        "--checkpoint",
        path_str(&ck),
        "--h0",
        "-0.25",
        "--t-end",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "t,h_0,energy\n0,-0.25,0.03125\n"
    );

    let out = onsagernet(&["rollout", "--checkpoint", path_str(&ck), "--h0", "1,2", "--t-end", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn blow_up_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let mut cfg = OnsagerConfig::small_unforced(1);
    cfg.forced = true;
    let mut net = OnsagerNet::zeros(&cfg);
    net.forcing.as_mut().unwrap().weight.data_mut()[0] = 1000.0;
    let ck = save_checkpoint(dir.path(), OdeNet::Onsager(net));
    let out = onsagernet(&["rollout", "--checkpoint", path_str(&ck), "--h0", "1", "--t-end", "10"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn checkpoint_version_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let ck = save_checkpoint(dir.path(), unit_decay());
    let text = std::fs::read_to_string(&ck)
        .unwrap()
        .replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    std::fs::write(&ck, text).unwrap();
    let out = onsagernet(&["export-report", "--checkpoint", path_str(&ck)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("version 2"), "{}", stderr(&out));
}
