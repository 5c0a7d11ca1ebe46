use std::path::Path;
use std::process::{Command, Output};

fn ifenn(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifenn"))
        .args(args)
        .env("IFENN_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ifenn(&["train", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(ifenn(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn data_train_eval_ifenn_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let snap = root.join("snap.csv");
    let run = root.join("run");

    let out = ifenn(&["mesh", "gen", "--n", "10"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("mesh_10x10.json").exists());

    let out = ifenn(&["data", "gen", "--n", "10", "--lf", "0.5", "--schedule", "0.5", "-o", s(&snap)], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(snap.exists());

    let args = ["train", "--layers", "2", "--width", "4", "--epochs", "50", "--lr", "1e-3", "--seed", "3", "--lbfgs-iter", "10", "--data", s(&snap), "-o", s(&run)];
    let out = ifenn(&args, root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.json", "manifest.json", "metrics.csv", "timing.json", "loss_history.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["status"]["state"], "completed");

    let out = ifenn(&["eval", "--checkpoint", s(&run), "--data", s(&snap)], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("eval.json").exists());

    // An untrained-quality net may or may not converge; either way a manifest is written.
    let idir = root.join("ifenn");
    let out = ifenn(&["ifenn", "--checkpoint", s(&run), "--n", "10", "--lf", "0.5", "-o", s(&idir)], root);
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    assert!(idir.join("ifenn_manifest.json").exists());
}

#[test]
fn failed_training_exits_one_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let snap = root.join("snap.csv");
    assert!(ifenn(&["data", "gen", "--n", "10", "--lf", "0.5", "--schedule", "0.5", "-o", s(&snap)], root).status.success());
    let run = root.join("bad");
    let out = ifenn(&["train", "--layers", "2", "--width", "3", "--epochs", "50", "--lr", "1e300", "--data", s(&snap), "-o", s(&run)], root);
    assert_eq!(out.status.code(), Some(1));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"]["state"], "failed");
    assert_eq!(manifest["status"]["stage"], "adam");
}

#[test]
fn missing_snapshot_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ifenn(&["train", "--layers", "2", "--width", "2", "--data", "/nonexistent/snap.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_manifest_per_run_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("conv.json");
    let spec = serde_json::json!({
        "kind": "convergence",
        "shapes": [[2, 2], [3, 3], [4, 4]],
        "meshes": [10, 12],
        "grid": [{"ep": 10, "lr": 1e-3}],
        "seeds_per_cell": 5,
        "parallelism": 4,
        "lbfgs_max_iter": 3,
        "schedule": [0.5],
        "lf": 0.5
    });
    std::fs::write(&config, spec.to_string()).unwrap();
    let out = ifenn(&["sweep", "--config", s(&config)], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = root.join("runs");
    let manifests = std::fs::read_dir(&runs).unwrap().filter(|e| e.as_ref().unwrap().path().join("manifest.json").exists()).count();
    assert_eq!(manifests, 30);
    let csvs: Vec<_> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).filter(|n| n == "summary.csv").collect();
    assert_eq!(csvs.len(), 1);

    let summary = std::fs::read_to_string(root.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6);

    let again = root.join("again.csv");
    let out = ifenn(&["report", "--runs", s(&runs), "-o", s(&again)], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&again).unwrap(), summary);
}

#[test]
fn bad_sweep_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("hps.json");
    let spec = serde_json::json!({"kind": "hps", "shapes": [[2, 6], [3, 3]], "meshes": [10], "grid": [{"ep": 10, "lr": 1e-3}]});
    std::fs::write(&config, spec.to_string()).unwrap();
    assert_eq!(ifenn(&["sweep", "--config", s(&config)], dir.path()).status.code(), Some(1));
}
