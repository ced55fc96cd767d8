//! Pipeline stages. Each stage reads the files of earlier stages, writes its
//! own directory keyed by the config hash, and finishes by writing a manifest;
//! a directory with a manifest is reused as is.

use std::path::{Path, PathBuf};

use bits_core::io::write_atomic;
use bits_core::metrics::{
    dataset_metrics, ou_perturb, scene_metrics, MetricReport, SceneMetrics, OU_THETA,
};
use bits_core::models::{
    likelihood_score, load_goal, load_occupancy, load_traj, save_goal, save_occupancy, save_traj, train_goal,
    train_occupancy, train_traj, GoalNet, OccupancyNet, TrainReport, TrajNet,
};
use bits_core::simengine::{run_rollout, Models, PolicyKind, Rollout};
use bits_core::world::{gen_expert_log, load_log, save_log, split_indices, Dataset, LogFormat, Scene};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Split};
use crate::error::{CliError, Result};
use crate::par::par_map;

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub hash: String,
    pub files: Vec<String>,
}

fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

fn finish(dir: &Path, cfg: &RunConfig, stage: &str, hash: String, files: Vec<String>) -> Result<()> {
    write_atomic(&dir.join(RESOLVED_CONFIG), cfg.to_toml()?.as_bytes())?;
    let m = Manifest {
        stage: stage.into(),
        hash,
        files,
    };
    write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&m)?.as_bytes())?;
    Ok(())
}

fn require(dir: &Path, stage: &str) -> Result<Manifest> {
    read_manifest(dir).ok_or_else(|| {
        CliError::Missing(format!(
            "{} has no completed {stage} output; run `bits {stage}` with the same config first",
            dir.display()
        ))
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(())
}

fn log_name(split: Split, index: usize) -> String {
    format!("{}/scene_{index:04}.bitslog", split.name())
}

/// Generates the train and test scene logs.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.logs_dir();
    if read_manifest(&dir).is_some() {
        info!("reusing logs in {}", dir.display());
        return Ok(dir);
    }
    let mut files = Vec::new();
    for split in [Split::Train, Split::Test] {
        let jobs: Vec<usize> = (0..cfg.data.count(split)).collect();
        let written = par_map(cfg.jobs, &jobs, |&i| -> Result<String> {
            let spec = cfg.data.scene_spec(split, i, cfg.seed);
            let log = gen_expert_log(&spec, cfg.data.agents, cfg.data.duration, spec.seed)?;
            let name = log_name(split, i);
            save_log(&log, &dir.join(&name), LogFormat::Text)?;
            Ok(name)
        });
        for name in written {
            files.push(name?);
        }
    }
    info!("wrote {} logs to {}", files.len(), dir.display());
    finish(&dir, cfg, "gen", cfg.gen_hash(), files)?;
    Ok(dir)
}

/// Loads the first `limit` scenes of a split.
pub fn load_scenes(cfg: &RunConfig, split: Split, limit: usize) -> Result<Vec<Scene>> {
    let dir = cfg.logs_dir();
    require(&dir, "gen")?;
    (0..limit.min(cfg.data.count(split)))
        .map(|i| Ok(Scene::new(load_log(&dir.join(log_name(split, i)))?)?))
        .collect()
}

pub const GOAL_FILE: &str = "goal.json";
pub const TRAJ_FILE: &str = "traj.json";
pub const OCCUPANCY_FILE: &str = "occupancy.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub dropped: usize,
    pub goal: TrainReport,
    pub traj: TrainReport,
    pub occupancy: TrainReport,
}

/// Trains the goal network, the policy/predictor network and the occupancy model.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.checkpoint_dir();
    if read_manifest(&dir).is_some() {
        info!("reusing checkpoints in {}", dir.display());
        return Ok(dir);
    }
    let scenes = load_scenes(cfg, Split::Train, cfg.data.train_scenes)?;
    let m = &cfg.model;
    let data = Dataset::build(scenes, cfg.data.sample_stride, m.horizon, &m.raster)?;
    if data.is_empty() {
        return Err(CliError::Core(bits_core::error::SimError::EmptyDataset));
    }
    let (train, val) = split_indices(data.len(), cfg.data.val_fraction, cfg.seed);
    info!("{} training samples ({} dropped)", data.len(), data.dropped);

    let mut goal = GoalNet::new(m, cfg.seed.wrapping_add(1))?;
    let goal_report = train_goal(&mut goal, &data, &cfg.train.goal, &train, &val)?;
    save_goal(&goal, &dir.join(GOAL_FILE))?;
    info!("goal network: {:?}", goal_report.ratios());

    let mut traj = TrajNet::new(m, cfg.seed.wrapping_add(2))?;
    let traj_report = train_traj(&mut traj, &data, &cfg.train.traj, &train, &val)?;
    save_traj(&traj, &dir.join(TRAJ_FILE))?;
    info!("policy network: {:?}", traj_report.ratios());

    let occ_data = if m.occupancy_steps == m.horizon {
        data.clone()
    } else {
        Dataset::build(data.scenes.clone(), cfg.data.sample_stride, m.occupancy_steps, &m.raster)?
    };
    let (otrain, oval) = split_indices(occ_data.len(), cfg.data.val_fraction, cfg.seed);
    let mut occ = OccupancyNet::new(m, cfg.seed.wrapping_add(3))?;
    let occ_report = train_occupancy(&mut occ, &occ_data, &cfg.train.occupancy, &otrain, &oval)?;
    save_occupancy(&occ, &dir.join(OCCUPANCY_FILE))?;
    info!("occupancy network: {:?}", occ_report.ratios());

    let summary = TrainSummary {
        samples: data.len(),
        dropped: data.dropped,
        goal: goal_report,
        traj: traj_report,
        occupancy: occ_report,
    };
    write_json(&dir.join("train_report.json"), &summary)?;
    let files = [GOAL_FILE, TRAJ_FILE, OCCUPANCY_FILE, "train_report.json"]
        .map(String::from)
        .to_vec();
    finish(&dir, cfg, "train", cfg.train_hash(), files)?;
    Ok(dir)
}

/// Networks a policy needs, loaded from the checkpoint directory.
pub struct LoadedModels {
    pub goal: Option<GoalNet>,
    pub traj: Option<TrajNet>,
}

impl LoadedModels {
    pub fn load(cfg: &RunConfig, policy: PolicyKind) -> Result<Self> {
        let dir = cfg.checkpoint_dir();
        if policy.needs_goal_net() || policy.needs_traj_net() {
            require(&dir, "train")?;
        }
        Ok(Self {
            goal: if policy.needs_goal_net() {
                Some(load_goal(&dir.join(GOAL_FILE))?)
            } else {
                None
            },
            traj: if policy.needs_traj_net() {
                Some(load_traj(&dir.join(TRAJ_FILE))?)
            } else {
                None
            },
        })
    }

    pub fn models(&self) -> Models<'_> {
        Models {
            goal: self.goal.as_ref(),
            traj: self.traj.as_ref(),
        }
    }
}

fn rollout_name(scene: usize, trial: usize) -> String {
    format!("scene_{scene:04}/trial_{trial}.json")
}

/// Runs `trials` rollouts of the configured policy on each test scene.
pub fn cmd_sim(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.sim_dir();
    if read_manifest(&dir).is_some() {
        info!("reusing rollouts in {}", dir.display());
        return Ok(dir);
    }
    let scenes = load_scenes(cfg, Split::Test, cfg.test_scenes())?;
    let loaded = LoadedModels::load(cfg, cfg.policy)?;
    let models = loaded.models();
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let written = par_map(cfg.jobs, &jobs, |&(s, t)| -> Result<String> {
        let r = run_rollout(&scenes[s].log, cfg.policy, models, &cfg.sim, cfg.trial_seed(s, t))?;
        let name = rollout_name(s, t);
        r.save(&dir.join(&name))?;
        Ok(name)
    });
    let files = written.into_iter().collect::<Result<Vec<_>>>()?;
    info!("wrote {} rollouts to {}", files.len(), dir.display());
    finish(&dir, cfg, "sim", cfg.sim_hash(), files)?;
    Ok(dir)
}

/// Rollouts of a completed simulation, grouped by scene.
pub fn load_rollouts(cfg: &RunConfig) -> Result<Vec<Vec<Rollout>>> {
    let dir = cfg.sim_dir();
    require(&dir, "sim")?;
    (0..cfg.test_scenes())
        .map(|s| (0..cfg.trials).map(|t| Ok(Rollout::load(&dir.join(rollout_name(s, t)))?)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub scenes: Vec<SceneMetrics>,
}

/// Computes the metric report of a completed simulation.
pub fn evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    let scenes = load_scenes(cfg, Split::Test, cfg.test_scenes())?;
    let rollouts = load_rollouts(cfg)?;
    let idx: Vec<usize> = (0..scenes.len()).collect();
    let per_scene = par_map(cfg.jobs, &idx, |&s| scene_metrics(&rollouts[s], &scenes[s].grid, &cfg.metrics))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut report = MetricReport::from_scenes(cfg.policy.name(), cfg.trials, &per_scene);
    let runs: Vec<(&Rollout, &Scene)> = rollouts
        .iter()
        .zip(&scenes)
        .flat_map(|(rs, sc)| rs.iter().map(move |r| (r, sc)))
        .collect();
    let pairs: Vec<_> = runs.iter().map(|(r, sc)| (*r, &sc.log)).collect();
    report.dataset = Some(dataset_metrics(&pairs)?);
    if cfg.eval.likelihood {
        let dir = cfg.checkpoint_dir();
        require(&dir, "train")?;
        let net = load_occupancy(&dir.join(OCCUPANCY_FILE))?;
        let scores = par_map(cfg.jobs, &runs, |(r, sc)| {
            likelihood_score(&r.to_log(sc.log.dt), &sc.grid, &net, cfg.eval.anchor_stride).map(|l| l.score)
        })
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
        report.likelihood = Some(scores.iter().sum::<f64>() / scores.len().max(1) as f64);
    }
    Ok(Evaluation {
        report,
        scenes: per_scene,
    })
}

/// Evaluates a completed simulation and writes its report as JSON and CSV.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(PathBuf, Evaluation)> {
    let dir = cfg.eval_dir();
    if read_manifest(&dir).is_some() {
        info!("reusing report in {}", dir.display());
        let text = std::fs::read_to_string(dir.join("report.json"))?;
        return Ok((dir, serde_json::from_str(&text)?));
    }
    let ev = evaluate(cfg)?;
    write_json(&dir.join("report.json"), &ev)?;
    write_atomic(&dir.join("report.csv"), MetricReport::to_csv(std::slice::from_ref(&ev.report)).as_bytes())?;
    finish(&dir, cfg, "eval", cfg.eval_hash(), vec!["report.json".into(), "report.csv".into()])?;
    Ok((dir, ev))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    CostWeights,
    Horizon,
    OuSigma,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::CostWeights => "cost_weights",
            SweepAxis::Horizon => "horizon",
            SweepAxis::OuSigma => "ou_sigma",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cost_weights" => Ok(SweepAxis::CostWeights),
            "horizon" => Ok(SweepAxis::Horizon),
            "ou_sigma" => Ok(SweepAxis::OuSigma),
            other => Err(format!(
                "unknown sweep axis {other:?} (expected cost_weights, horizon or ou_sigma)"
            )),
        }
    }
}

/// One setting of a sweep: a full report for simulation sweeps, or the mean
/// expert likelihood for the noise sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub report: Option<MetricReport>,
    pub likelihood: Option<f64>,
}

/// Mean likelihood of the test logs after Ornstein-Uhlenbeck position noise.
pub fn expert_likelihood(cfg: &RunConfig, sigma: f64) -> Result<f64> {
    let scenes = load_scenes(cfg, Split::Test, cfg.test_scenes())?;
    let dir = cfg.checkpoint_dir();
    require(&dir, "train")?;
    let net = load_occupancy(&dir.join(OCCUPANCY_FILE))?;
    let idx: Vec<usize> = (0..scenes.len()).collect();
    let scores = par_map(cfg.jobs, &idx, |&s| -> Result<f64> {
        let noisy = ou_perturb(&scenes[s].log, OU_THETA, sigma, cfg.trial_seed(s, 0))?;
        Ok(likelihood_score(&noisy, &scenes[s].grid, &net, cfg.eval.anchor_stride)?.score)
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

/// Runs one ablation sweep, training and simulating as needed.
pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis) -> Result<(PathBuf, Vec<SweepPoint>)> {
    let mut points = Vec::new();
    let mut run = |c: RunConfig, label: String| -> Result<()> {
        cmd_train(&c)?;
        cmd_sim(&c)?;
        let (_, ev) = cmd_eval(&c)?;
        let mut report = ev.report;
        report.policy = label.clone();
        points.push(SweepPoint {
            label,
            report: Some(report),
            likelihood: None,
        });
        Ok(())
    };
    cmd_gen(cfg)?;
    match axis {
        SweepAxis::CostWeights => {
            for &off in &cfg.sweep.offroad_weights {
                for &col in &cfg.sweep.collision_weights {
                    let mut c = cfg.clone();
                    c.policy = PolicyKind::Bits;
                    c.sim.weights.collision = col;
                    c.sim.weights.offroad = off;
                    c.validate()?;
                    run(c, format!("bits col={col} off={off}"))?;
                }
            }
        }
        SweepAxis::Horizon => {
            for &h in &cfg.sweep.horizons {
                let mut c = cfg.clone();
                c.policy = PolicyKind::Bits;
                c.model.horizon = h;
                c.validate()?;
                run(c, format!("bits H={h}"))?;
            }
        }
        SweepAxis::OuSigma => {
            cmd_train(cfg)?;
            for &sigma in &cfg.sweep.ou_sigmas {
                points.push(SweepPoint {
                    label: format!("expert ou_sigma={sigma}"),
                    report: None,
                    likelihood: Some(expert_likelihood(cfg, sigma)?),
                });
            }
        }
    }
    let key = {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(&(cfg.eval_hash(), cfg.train_hash(), axis, &cfg.sweep))?;
        hex::encode(&Sha256::digest(&bytes)[..6])
    };
    let dir = cfg.paths.outputs.join(format!("sweep-{}-{key}", axis.name()));
    write_json(&dir.join("sweep.json"), &points)?;
    write_atomic(&dir.join("sweep.csv"), sweep_csv(&points).as_bytes())?;
    finish(&dir, cfg, "sweep", key, vec!["sweep.json".into(), "sweep.csv".into()])?;
    Ok((dir, points))
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let reports: Vec<MetricReport> = points.iter().filter_map(|p| p.report.clone()).collect();
    if !reports.is_empty() {
        return MetricReport::to_csv(&reports);
    }
    let mut out = String::from("label,likelihood\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.label, p.likelihood.map_or(String::new(), |l| l.to_string())));
    }
    out
}
