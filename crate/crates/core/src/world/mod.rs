//! Domain types, procedural maps, the synthetic expert, the log format and
//! training-sample extraction.

mod expert;
mod logfmt;
mod map;
mod samples;
mod types;

pub use expert::{gen_expert_log, gen_expert_log_with, ExpertConfig, IdmParams};
pub use logfmt::{
    from_binary, from_text, load_log, parse_log, save_log, serialize_log, to_binary, to_text, LogFormat,
    LOG_VERSION,
};
pub use map::{gen_map, Lane, LaneGraph, LaneKind, MapGeometry, MapSpec, Polygon, SpawnPoint, SLOT_SPACING};
pub use samples::{extract_samples, split_indices, Dataset, Extraction, NeighborTarget, Sample, Scene};
pub use types::{AgentId, AgentState, EpisodeMeta, Pose, SceneLog};
