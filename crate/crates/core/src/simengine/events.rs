use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::raster::SemanticGrid;
use crate::simengine::collision::{detect_collisions, CollisionType};
use crate::world::{AgentId, AgentState};

/// Offroad failures need strictly more than this many consecutive offroad steps.
pub const OFFROAD_FAILURE_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Collision,
    Offroad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FailureEvent {
    pub agent_id: AgentId,
    pub kind: FailureKind,
    /// Frame index of the first contact, or of the start of the offroad run.
    pub step: usize,
    pub collision: Option<CollisionType>,
}

/// Per-frame offroad flags by agent: the centroid's pixel is not drivable
/// (points outside the grid count as offroad).
pub fn detect_offroad(frames: &[Vec<AgentState>], grid: &SemanticGrid) -> BTreeMap<AgentId, Vec<bool>> {
    let mut out: BTreeMap<AgentId, Vec<bool>> = BTreeMap::new();
    for (t, frame) in frames.iter().enumerate() {
        for s in frame {
            let flags = out.entry(s.agent_id).or_insert_with(|| vec![false; frames.len()]);
            flags[t] = !grid.is_drivable(s.x, s.y);
        }
    }
    out
}

/// Start of the first run longer than [`OFFROAD_FAILURE_STEPS`].
pub fn offroad_failure_start(flags: &[bool]) -> Option<usize> {
    let mut run = 0;
    for (t, &f) in flags.iter().enumerate() {
        run = if f { run + 1 } else { 0 };
        if run > OFFROAD_FAILURE_STEPS {
            return Some(t + 1 - run);
        }
    }
    None
}

/// Failure events of a state sequence: one collision event per agent and
/// contact partner at first contact, typed by the partner's bearing then,
/// and at most one offroad event per agent. Sorted by agent, kind, step.
pub fn compute_events(frames: &[Vec<AgentState>], grid: &SemanticGrid) -> Vec<FailureEvent> {
    let mut seen: BTreeMap<(AgentId, AgentId), ()> = BTreeMap::new();
    let mut events = Vec::new();
    for (t, frame) in frames.iter().enumerate() {
        for c in detect_collisions(frame) {
            if seen.insert((c.agent, c.other), ()).is_none() {
                events.push(FailureEvent {
                    agent_id: c.agent,
                    kind: FailureKind::Collision,
                    step: t,
                    collision: Some(c.kind),
                });
            }
        }
    }
    for (id, flags) in detect_offroad(frames, grid) {
        if let Some(step) = offroad_failure_start(&flags) {
            events.push(FailureEvent {
                agent_id: id,
                kind: FailureKind::Offroad,
                step,
                collision: None,
            });
        }
    }
    events.sort();
    events
}
