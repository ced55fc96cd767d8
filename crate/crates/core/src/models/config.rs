use nncore::layers::BackboneConfig;
use serde::{Deserialize, Serialize};

use crate::dynamics::Limits;
use crate::error::{Result, SimError};
use crate::raster::RasterConfig;

/// Architecture and geometry shared by all learned models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub raster: RasterConfig,
    pub backbone: BackboneConfig,
    /// Prediction horizon in steps.
    pub horizon: usize,
    /// Hidden width of the policy, predictor and baseline heads.
    pub hidden: usize,
    /// Side of the predictor's RoI window, meters.
    pub roi_extent: f64,
    /// Occupancy grid cell size, meters.
    pub occupancy_cell: f64,
    /// Future steps predicted by the occupancy model.
    pub occupancy_steps: usize,
    pub limits: Limits,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            raster: RasterConfig::default(),
            backbone: BackboneConfig::default(),
            horizon: 20,
            hidden: 128,
            roi_extent: 16.0,
            occupancy_cell: 2.0,
            occupancy_steps: 20,
            limits: Limits::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.raster.validate()?;
        self.limits.validate()?;
        let stages = self.backbone.stages.len();
        if stages < 2 || !self.raster.size.is_multiple_of(1 << stages) {
            return Err(SimError::Config(format!(
                "{stages} backbone stages need at least 2 and must divide raster size {}",
                self.raster.size
            )));
        }
        if self.horizon == 0 || self.occupancy_steps == 0 || self.hidden == 0 {
            return Err(SimError::Config("horizon, occupancy steps and hidden width must be positive".into()));
        }
        let level = self.occupancy_level()?;
        if level >= stages {
            return Err(SimError::Config(format!(
                "occupancy level {level} needs more than {stages} backbone stages"
            )));
        }
        Ok(())
    }

    /// Half the raster side in meters; used to scale ego-frame positions.
    pub fn half_extent(&self) -> f64 {
        self.raster.size as f64 * self.raster.pixel_size / 2.0
    }

    /// Decoder level whose stride gives `occupancy_cell`-meter cells.
    pub fn occupancy_level(&self) -> Result<usize> {
        let ratio = self.occupancy_cell / self.raster.pixel_size;
        let level = ratio.log2().round();
        if level < 1.0 || (2f64.powf(level) - ratio).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "occupancy cell {} m must be a power-of-two multiple (>= 2) of the {} m pixel",
                self.occupancy_cell, self.raster.pixel_size
            )));
        }
        Ok(level as usize)
    }

    /// Cells per side of the occupancy grid.
    pub fn occupancy_side(&self) -> usize {
        self.raster.size >> self.occupancy_level().unwrap_or(1)
    }

    /// Occupancy cell of an ego-frame point.
    pub fn occupancy_cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let fine = self.raster.cell_of(x, y)?;
        let level = self.occupancy_level().ok()?;
        let (r, c) = (fine / self.raster.size, fine % self.raster.size);
        Some((r >> level) * self.occupancy_side() + (c >> level))
    }
}

/// Optimization schedule of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validation period in iterations.
    pub val_every: usize,
    /// Cap on validation samples per evaluation.
    pub val_samples: usize,
    /// Stop once every tracked training loss falls below this fraction of its
    /// initial value; `None` runs all iterations.
    pub stop_ratio: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 100,
            lr: 1e-4,
            seed: 0,
            val_every: 500,
            val_samples: 200,
            stop_ratio: None,
        }
    }
}
