use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::metrics::dataset::DatasetMetrics;
use crate::metrics::density::{coverage, diversity, kde_density, Coverage, DensityGrid, DensityProfile};
use crate::metrics::failure::{failure_rates, mean_rates, FailureRates};
use crate::raster::SemanticGrid;
use crate::simengine::Rollout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Density cell size, meters.
    pub cell: f64,
    /// Gaussian kernel bandwidth, meters.
    pub bandwidth: f64,
    /// Per-cell mass above which a cell counts as covered.
    pub threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            cell: 2.0,
            bandwidth: 2.0,
            threshold: 1e-3,
        }
    }
}

/// Metrics of the trials of one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub failures: FailureRates,
    pub coverage: Coverage,
    pub diversity: f64,
}

/// Positions of every agent at every frame.
pub fn positions(rollout: &Rollout) -> Vec<(f64, f64)> {
    rollout.frames.iter().flatten().map(|s| (s.x, s.y)).collect()
}

/// Failure rates, coverage and diversity over trials that share an initial scene.
pub fn scene_metrics(trials: &[Rollout], grid: &SemanticGrid, cfg: &MetricsConfig) -> Result<SceneMetrics> {
    if trials.is_empty() {
        return Err(SimError::InvalidArgument("scene has no rollouts".into()));
    }
    let dg = DensityGrid::covering(grid, cfg.cell)?;
    let profiles = trials
        .iter()
        .map(|r| kde_density(&positions(r), &dg, cfg.bandwidth))
        .collect::<Result<Vec<DensityProfile>>>()?;
    Ok(SceneMetrics {
        failures: failure_rates(trials, grid),
        coverage: coverage(&profiles, cfg.threshold, grid),
        diversity: diversity(&profiles)?,
    })
}

/// Aggregate report of one policy over an evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub policy: String,
    pub scenes: usize,
    pub trials: usize,
    pub failures: FailureRates,
    /// Mean covered cells per scene.
    pub coverage_drivable: f64,
    pub coverage_non_drivable: f64,
    /// Mean per-scene diversity, meters.
    pub diversity: f64,
    pub dataset: Option<DatasetMetrics>,
    pub likelihood: Option<f64>,
}

impl MetricReport {
    pub fn from_scenes(policy: &str, trials: usize, scenes: &[SceneMetrics]) -> Self {
        let n = scenes.len().max(1) as f64;
        Self {
            policy: policy.to_string(),
            scenes: scenes.len(),
            trials,
            failures: mean_rates(&scenes.iter().map(|s| s.failures).collect::<Vec<_>>()),
            coverage_drivable: scenes.iter().map(|s| s.coverage.drivable as f64).sum::<f64>() / n,
            coverage_non_drivable: scenes.iter().map(|s| s.coverage.non_drivable as f64).sum::<f64>() / n,
            diversity: scenes.iter().map(|s| s.diversity).sum::<f64>() / n,
            dataset: None,
            likelihood: None,
        }
    }

    pub const CSV_HEADER: &'static str = "policy,scenes,trials,fr,coll_fr,offroad_fr,coll_any,coll_rear,coll_front,coll_side,offroad,coverage_drivable,coverage_non_drivable,diversity,speed,lon_acc,lat_acc,jerk,sade,sfde,likelihood";

    pub fn csv_row(&self) -> String {
        let f = &self.failures;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let d = self.dataset;
        [
            self.policy.clone(),
            self.scenes.to_string(),
            self.trials.to_string(),
            f.fr.to_string(),
            f.coll_fr.to_string(),
            f.offroad_fr.to_string(),
            f.coll_any.to_string(),
            f.coll_rear.to_string(),
            f.coll_front.to_string(),
            f.coll_side.to_string(),
            f.offroad.to_string(),
            self.coverage_drivable.to_string(),
            self.coverage_non_drivable.to_string(),
            self.diversity.to_string(),
            opt(d.map(|d| d.speed)),
            opt(d.map(|d| d.lon_acc)),
            opt(d.map(|d| d.lat_acc)),
            opt(d.map(|d| d.jerk)),
            opt(d.map(|d| d.sade)),
            opt(d.map(|d| d.sfde)),
            opt(self.likelihood),
        ]
        .join(",")
    }

    /// Header plus one row per report.
    pub fn to_csv(reports: &[MetricReport]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}
