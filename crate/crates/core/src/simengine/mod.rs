//! Closed-loop multi-agent rollouts and failure detection.

mod collision;
mod events;
mod rollout;

pub use collision::{boxes_overlap, collision_type, detect_collisions, penetration_depth, CollisionType, Contact};
pub use events::{compute_events, detect_offroad, offroad_failure_start, FailureEvent, FailureKind, OFFROAD_FAILURE_STEPS};
pub use rollout::{
    agent_rng, run_rollout, DecisionRecord, Models, PolicyKind, Rollout, SimConfig, ROLLOUT_FORMAT, ROLLOUT_VERSION,
};
