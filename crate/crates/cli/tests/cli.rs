use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bits_cli::config::RunConfig;
use bits_cli::pipeline::{Evaluation, GOAL_FILE, OCCUPANCY_FILE, TRAJ_FILE};
use bits_core::models::TrainConfig;
use bits_core::raster::RasterConfig;
use bits_core::world::MapSpec;
use nncore::layers::BackboneConfig;

/// A configuration small enough to generate, train and simulate in seconds.
fn tiny(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.logs = root.join("logs");
    cfg.paths.checkpoints = root.join("ckpt");
    cfg.paths.outputs = root.join("out");
    cfg.data.train_scenes = 1;
    cfg.data.test_scenes = 2;
    cfg.data.agents = 3;
    cfg.data.duration = 5.0;
    cfg.data.layouts = vec![MapSpec::straight(200.0, 2, 0).geometry];
    cfg.trials = 2;
    cfg.model.raster = RasterConfig {
        size: 32,
        pixel_size: 1.0,
        history: 2,
    };
    cfg.model.backbone = BackboneConfig {
        stages: vec![4, 4],
        feature: 8,
    };
    cfg.model.hidden = 16;
    cfg.model.horizon = 5;
    cfg.model.occupancy_steps = 5;
    let quick = TrainConfig {
        iterations: 5,
        batch_size: 4,
        val_every: 5,
        val_samples: 4,
        ..cfg.train.goal.clone()
    };
    cfg.train.goal = quick.clone();
    cfg.train.traj = quick.clone();
    cfg.train.occupancy = quick;
    cfg.sim.steps = 20;
    cfg.sim.start_step = 5;
    cfg.sim.candidates = 4;
    cfg.eval.anchor_stride = 10;
    cfg
}

fn write_config(root: &Path, cfg: &RunConfig) -> PathBuf {
    let path = root.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn bits(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bits"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bits(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn bad_arguments_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bits(&["sim", "--policy", "teleport"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("teleport"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nwarp_factor = 9\n").unwrap();
    assert!(!bits(&["config", "--config", bad.to_str().unwrap()]).status.success());
    let missing = dir.path().join("missing.toml");
    assert!(!bits(&["config", "--config", missing.to_str().unwrap()]).status.success());

    // Simulating before generating and training is reported, not a panic.
    let cfg = tiny(dir.path());
    let path = write_config(dir.path(), &cfg);
    let out = bits(&["sim", "--config", path.to_str().unwrap(), "--policy", "bits"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = write_config(dir.path(), &cfg);
    let text = ok(&["config", "--config", path.to_str().unwrap(), "--seed", "7"]);
    let back = RunConfig::from_toml(&text).unwrap();
    assert_eq!(back.seed, 7);
    assert_eq!(RunConfig { seed: cfg.seed, ..back }, cfg);
}

#[test]
fn log_replay_pipeline_scores_zero_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.eval.likelihood = false;
    let path = write_config(dir.path(), &cfg);
    let c = path.to_str().unwrap();
    ok(&["gen", "--config", c]);
    let sim = ok(&["sim", "--config", c, "--policy", "log_replay"]);
    let csv = ok(&["eval", "--config", c, "--policy", "log_replay"]);
    let eval_dir = PathBuf::from(csv.lines().last().unwrap());
    let report = std::fs::read_to_string(eval_dir.join("report.json")).unwrap();
    let ev: Evaluation = serde_json::from_str(&report).unwrap();
    let d = ev.report.dataset.unwrap();
    assert_eq!((d.speed, d.lon_acc, d.lat_acc, d.jerk, d.sade, d.sfde), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    assert_eq!(ev.report.failures.fr, 0.0);
    assert_eq!(ev.report.scenes, 2);

    // A second run reuses every stage and prints the same outputs.
    assert_eq!(ok(&["sim", "--config", c, "--policy", "log_replay"]), sim);
    assert_eq!(ok(&["eval", "--config", c, "--policy", "log_replay"]), csv);
    assert_eq!(std::fs::read_to_string(eval_dir.join("report.json")).unwrap(), report);
}

#[test]
fn tiny_bits_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = write_config(dir.path(), &cfg);
    let c = path.to_str().unwrap();
    let ckpt = PathBuf::from(ok(&["train", "--config", c]).trim());
    for name in [GOAL_FILE, TRAJ_FILE, OCCUPANCY_FILE] {
        assert!(ckpt.join(name).exists(), "{name}");
    }
    let sim_dir = PathBuf::from(ok(&["sim", "--config", c]).trim());
    let rollout = sim_dir.join("scene_0000/trial_0.json");
    assert!(rollout.exists());
    let csv = ok(&["eval", "--config", c]);
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("bits,2,2,"), "{row}");
    // The likelihood column is filled when the occupancy model is used.
    assert!(!row.ends_with(','), "{row}");

    let svg = PathBuf::from(ok(&["plot", rollout.to_str().unwrap()]).trim());
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}
