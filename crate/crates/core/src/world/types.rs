use std::collections::BTreeMap;

use nncore::wrap_angle;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::world::map::MapSpec;

pub type AgentId = u32;

/// Planar pose: position in meters, heading in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// Expresses a world point in this pose's frame (+x along the heading).
    pub fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }

    /// `other` expressed relative to this pose.
    pub fn relative(&self, other: &Pose) -> Pose {
        let (x, y) = self.to_local(other.x, other.y);
        Pose::new(x, y, wrap_angle(other.heading - self.heading))
    }

    /// Inverse of [`Pose::relative`].
    pub fn compose(&self, local: &Pose) -> Pose {
        let (x, y) = self.to_world(local.x, local.y);
        Pose::new(x, y, wrap_angle(self.heading + local.heading))
    }
}

/// Kinematic state and box extent of one vehicle at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: AgentId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl AgentState {
    /// Validating constructor; the heading is wrapped into `(-pi, pi]`.
    pub fn new(
        agent_id: AgentId,
        x: f64,
        y: f64,
        heading: f64,
        speed: f64,
        length: f64,
        width: f64,
    ) -> Result<Self> {
        let s = Self {
            agent_id,
            x,
            y,
            heading: wrap_angle(heading),
            speed,
            length,
            width,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x, self.y, self.heading, self.speed, self.length, self.width];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("agent state"));
        }
        if self.speed < 0.0 {
            return Err(SimError::InvalidArgument(format!("negative speed {}", self.speed)));
        }
        if self.length <= 0.0 || self.width <= 0.0 {
            return Err(SimError::InvalidArgument(format!(
                "box extent must be positive, got {} x {}",
                self.length, self.width
            )));
        }
        if !(self.heading > -std::f64::consts::PI && self.heading <= std::f64::consts::PI) {
            return Err(SimError::InvalidArgument(format!("heading {} not wrapped", self.heading)));
        }
        Ok(())
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            heading: wrap_angle(pose.heading),
            ..*self
        }
    }

    /// Box corners in world coordinates, counter-clockwise from front-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let p = self.pose();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [
            p.to_world(hl, hw),
            p.to_world(-hl, hw),
            p.to_world(-hl, -hw),
            p.to_world(hl, -hw),
        ]
    }
}

/// Generator bookkeeping stored with every log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub requested_agents: usize,
    pub spawned_agents: usize,
    /// Set when spawn conflicts left fewer agents than requested.
    pub congested: bool,
    /// Free-form generator parameters.
    pub params: BTreeMap<String, String>,
}

/// Per-step states of every agent in an episode on one map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLog {
    pub map_id: String,
    pub map: MapSpec,
    pub dt: f64,
    /// `steps[t]` holds the states alive at step `t`, sorted by agent id.
    pub steps: Vec<Vec<AgentState>>,
    pub meta: EpisodeMeta,
}

impl SceneLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn timestamp(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn state(&self, agent: AgentId, step: usize) -> Option<&AgentState> {
        let frame = self.steps.get(step)?;
        frame
            .binary_search_by_key(&agent, |s| s.agent_id)
            .ok()
            .map(|i| &frame[i])
    }

    pub fn agent_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<AgentId> = self.steps.iter().flatten().map(|s| s.agent_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// `(first, last)` step at which the agent is present.
    pub fn lifespan(&self, agent: AgentId) -> Option<(usize, usize)> {
        let first = (0..self.steps.len()).find(|&t| self.state(agent, t).is_some())?;
        let last = (first..self.steps.len())
            .rev()
            .find(|&t| self.state(agent, t).is_some())?;
        Some((first, last))
    }

    /// Checks the log invariants: constant positive dt, sorted unique ids per
    /// step, valid states, and contiguous lifespans.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidArgument(format!("dt {} must be positive", self.dt)));
        }
        for (t, frame) in self.steps.iter().enumerate() {
            for w in frame.windows(2) {
                if w[0].agent_id >= w[1].agent_id {
                    return Err(SimError::InvalidArgument(format!(
                        "step {t}: agent ids not strictly increasing"
                    )));
                }
            }
            for s in frame {
                s.validate()?;
            }
        }
        for id in self.agent_ids() {
            let (first, last) = self.lifespan(id).expect("id present");
            if let Some(gap) = (first..=last).find(|&t| self.state(id, t).is_none()) {
                return Err(SimError::MissingAgent { agent: id, step: gap });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pose_round_trip() {
        let p = Pose::new(3.0, -2.0, 0.7);
        let q = Pose::new(-1.0, 5.0, -2.9);
        let r = p.relative(&q);
        let back = p.compose(&r);
        assert!((back.x - q.x).abs() < 1e-12);
        assert!((back.y - q.y).abs() < 1e-12);
        assert!((wrap_angle(back.heading - q.heading)).abs() < 1e-12);
    }

    #[test]
    fn state_validation() {
        assert!(AgentState::new(0, 0.0, 0.0, 3.0 * PI, 1.0, 4.5, 1.8).is_ok());
        assert!(AgentState::new(0, 0.0, 0.0, 0.0, -1.0, 4.5, 1.8).is_err());
        assert!(AgentState::new(0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.8).is_err());
        assert!(AgentState::new(0, f64::NAN, 0.0, 0.0, 1.0, 4.5, 1.8).is_err());
        let s = AgentState::new(0, 0.0, 0.0, -PI, 1.0, 4.5, 1.8).unwrap();
        assert_eq!(s.heading, PI);
    }

    #[test]
    fn corners_of_axis_aligned_box() {
        let s = AgentState::new(1, 1.0, 2.0, 0.0, 0.0, 4.0, 2.0).unwrap();
        let c = s.corners();
        assert_eq!(c[0], (3.0, 3.0));
        assert_eq!(c[2], (-1.0, 1.0));
    }
}
