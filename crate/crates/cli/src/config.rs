//! Run configuration: one TOML document drives every pipeline stage.

use std::path::{Path, PathBuf};

use bits_core::metrics::MetricsConfig;
use bits_core::models::{ModelConfig, TrainConfig};
use bits_core::raster::RasterConfig;
use bits_core::simengine::{PolicyKind, SimConfig};
use bits_core::world::{MapGeometry, MapSpec};
use nncore::layers::BackboneConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Roots under which each stage creates its content-addressed directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub logs: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            logs: "runs/logs".into(),
            checkpoints: "runs/checkpoints".into(),
            outputs: "runs/outputs".into(),
        }
    }
}

/// Synthetic scene generation and sample extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub agents: usize,
    /// Log length, seconds.
    pub duration: f64,
    /// Road layouts, used round-robin by scene index.
    pub layouts: Vec<MapGeometry>,
    /// Map raster pixel size, meters.
    pub pixel_size: f64,
    /// Steps between extracted training samples.
    pub sample_stride: usize,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 9,
            test_scenes: 20,
            agents: 8,
            duration: 21.0,
            layouts: vec![
                MapSpec::straight(300.0, 3, 0).geometry,
                MapSpec::arc(60.0, 1.5, 200.0, 2, 0).geometry,
                MapSpec::four_way(120.0, 0).geometry,
            ],
            pixel_size: 0.5,
            sample_stride: 5,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl DataConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_scenes,
            Split::Test => self.test_scenes,
        }
    }

    /// Map of scene `index`; train and test scenes never share a seed.
    pub fn scene_spec(&self, split: Split, index: usize, seed: u64) -> MapSpec {
        let geometry = self.layouts[index % self.layouts.len()].clone();
        let offset = match split {
            Split::Train => 0,
            Split::Test => 1 << 32,
        };
        MapSpec {
            geometry,
            pixel_size: self.pixel_size,
            seed: seed.wrapping_mul(1 << 40).wrapping_add(offset + index as u64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub goal: TrainConfig,
    pub traj: TrainConfig,
    pub occupancy: TrainConfig,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let base = TrainConfig {
            iterations: 400,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
            val_every: 100,
            val_samples: 64,
            stop_ratio: None,
        };
        Self {
            goal: base.clone(),
            traj: TrainConfig {
                iterations: 1500,
                ..base.clone()
            },
            occupancy: base,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Score rollouts with the occupancy model.
    pub likelihood: bool,
    /// Steps between likelihood anchors.
    pub anchor_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            likelihood: true,
            anchor_stride: 20,
        }
    }
}

/// Axes of the ablation sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub collision_weights: Vec<f64>,
    pub offroad_weights: Vec<f64>,
    pub horizons: Vec<usize>,
    pub ou_sigmas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            collision_weights: vec![0.0, 0.1, 1.0, 10.0, 100.0],
            offroad_weights: vec![0.0, 1.0],
            horizons: vec![10, 20, 50, 80],
            ou_sigmas: vec![0.0, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub policy: PolicyKind,
    /// Rollouts per test scene.
    pub trials: usize,
    /// Worker threads for simulation and evaluation; does not affect results.
    pub jobs: usize,
    /// Simulate and evaluate only the first this-many test scenes.
    pub scenes: Option<usize>,
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainBlock,
    pub sim: SimConfig,
    pub metrics: MetricsConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            policy: PolicyKind::Bits,
            trials: 5,
            jobs: 1,
            scenes: None,
            paths: Paths::default(),
            data: DataConfig::default(),
            model: ModelConfig {
                raster: RasterConfig {
                    size: 64,
                    pixel_size: 1.0,
                    history: 10,
                },
                backbone: BackboneConfig {
                    stages: vec![8, 16, 16, 16],
                    feature: 16,
                },
                hidden: 64,
                ..ModelConfig::default()
            },
            train: TrainBlock::default(),
            sim: SimConfig::default(),
            metrics: MetricsConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let d = &self.data;
        if d.layouts.is_empty() || d.agents == 0 || d.sample_stride == 0 {
            return Err(CliError::Config("data needs layouts, agents and a positive sample stride".into()));
        }
        if !(d.duration > 0.0 && d.pixel_size > 0.0) {
            return Err(CliError::Config("data duration and pixel size must be positive".into()));
        }
        if self.trials == 0 || self.jobs == 0 {
            return Err(CliError::Config("trials and jobs must be positive".into()));
        }
        if self.eval.anchor_stride == 0 {
            return Err(CliError::Config("eval anchor stride must be positive".into()));
        }
        self.model.validate()?;
        self.sim.validate()?;
        Ok(())
    }

    fn digest<T: Serialize>(parts: &T) -> String {
        let bytes = serde_json::to_vec(parts).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..6])
    }

    /// Key of the generated logs.
    pub fn gen_hash(&self) -> String {
        Self::digest(&(self.version, self.seed, &self.data))
    }

    /// Key of the trained checkpoints.
    pub fn train_hash(&self) -> String {
        Self::digest(&(self.gen_hash(), &self.model, &self.train))
    }

    /// Key of a set of rollouts.
    pub fn sim_hash(&self) -> String {
        let models = if self.policy == PolicyKind::LogReplay {
            String::new()
        } else {
            self.train_hash()
        };
        Self::digest(&(self.gen_hash(), models, self.policy, self.trials, self.test_scenes(), &self.sim))
    }

    /// Key of an evaluation report.
    pub fn eval_hash(&self) -> String {
        let occupancy = if self.eval.likelihood { self.train_hash() } else { String::new() };
        Self::digest(&(self.sim_hash(), occupancy, &self.metrics, &self.eval))
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.paths.logs.join(format!("gen-{}", self.gen_hash()))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.paths.checkpoints.join(format!("train-{}", self.train_hash()))
    }

    pub fn sim_dir(&self) -> PathBuf {
        self.paths.outputs.join(format!("sim-{}-{}", self.policy, self.sim_hash()))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.paths.outputs.join(format!("eval-{}-{}", self.policy, self.eval_hash()))
    }

    /// Test scenes used by simulation and evaluation.
    pub fn test_scenes(&self) -> usize {
        self.scenes.map_or(self.data.test_scenes, |n| n.min(self.data.test_scenes))
    }

    /// Seed of rollout `trial` of test scene `scene`.
    pub fn trial_seed(&self, scene: usize, trial: usize) -> u64 {
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add((scene as u64) << 16)
            .wrapping_add(trial as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[sim]\nsteps = 50\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.sim.steps, 50);
        assert_eq!(cfg.sim.replan_every, SimConfig::default().replan_every);
    }

    #[test]
    fn unknown_keys_and_policies_are_rejected() {
        assert!(RunConfig::from_toml("[sim]\nstepz = 5\n").is_err());
        assert!(RunConfig::from_toml("policy = \"teleport\"\n").is_err());
        assert!(RunConfig::from_toml("version = 2\n").is_err());
    }

    #[test]
    fn hashes_track_their_inputs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.metrics.threshold = 1e-2;
        assert_eq!(a.sim_hash(), b.sim_hash());
        assert_ne!(a.eval_hash(), b.eval_hash());
        b.jobs = 4;
        assert_eq!(a.gen_hash(), b.gen_hash());
        b.sim.steps = 10;
        assert_ne!(a.sim_hash(), b.sim_hash());
        assert_eq!(a.train_hash(), b.train_hash());
    }
}
