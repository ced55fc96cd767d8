//! Evaluation metrics: failure rates, KDE coverage and diversity, driving
//! profile distances, trajectory displacement, and the noise harness used to
//! sanity-check the learned likelihood.

mod dataset;
mod density;
mod emd;
mod failure;
mod report;

pub use dataset::{
    dataset_metrics, ou_perturb, DatasetMetrics, Histogram, Profiles, ACCEL_RANGE, HISTOGRAM_BINS, JERK_RANGE, OU_THETA,
    SPEED_RANGE,
};
pub use density::{coverage, diversity, kde_density, Coverage, DensityGrid, DensityProfile};
pub use emd::{emd, transport_cost, Distribution, MASS_TOLERANCE};
pub use failure::{failure_rates, mean_rates, rollout_failures, FailureRates};
pub use report::{positions, scene_metrics, MetricReport, MetricsConfig, SceneMetrics};
