//! Rule-based selection among sampled candidate plans.

use serde::{Deserialize, Serialize};

use crate::dynamics::Control;
use crate::error::{Result, SimError};
use crate::models::GoalPose;
use crate::raster::{DistanceMap, SemanticGrid, DEFAULT_SATURATION};
use crate::simengine::penetration_depth;
use crate::world::AgentState;

/// How corner terms are reduced into one box distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerReduction {
    /// Minimum over the eight corner terms; zero at contact, negative on penetration.
    #[default]
    NearestCorner,
    /// Maximum over the eight corner terms, kept for comparison only.
    LiteralMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub collision: f64,
    pub offroad: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub reduction: CornerReduction,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            collision: 10.0,
            offroad: 1.0,
            alpha: 1.0,
            beta: 4.0,
            reduction: CornerReduction::NearestCorner,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.collision, self.offroad, self.alpha, self.beta];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SimError::Config(format!("cost weights must be finite and non-negative: {vals:?}")));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn corner_terms(frame: &AgentState, other: &AgentState) -> [f64; 4] {
    let pose = frame.pose();
    let (hl, hw) = (frame.length / 2.0, frame.width / 2.0);
    other.corners().map(|(x, y)| {
        let (dx, dy) = pose.to_local(x, y);
        (dx.abs() - hl).max(dy.abs() - hw)
    })
}

/// Signed corner-based distance between two boxes: each box's corners are
/// measured against the other box's half extents as `max(|dx| - L/2, |dy| - W/2)`.
/// With the nearest-corner reduction, overlapping boxes are additionally
/// bounded above by minus their penetration depth, so coincident or crossing
/// boxes come out negative even when no corner lies strictly inside.
pub fn corner_distance(ego: &AgentState, other: &AgentState, reduction: CornerReduction) -> Result<f64> {
    for s in [ego, other] {
        if !(s.length > 0.0 && s.width > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "agent {} has a degenerate {}x{} box",
                s.agent_id, s.length, s.width
            )));
        }
    }
    let terms = corner_terms(ego, other).into_iter().chain(corner_terms(other, ego));
    Ok(match reduction {
        CornerReduction::NearestCorner => {
            let d = terms.fold(f64::INFINITY, f64::min);
            penetration_depth(ego, other).map_or(d, |p| d.min(-p))
        }
        CornerReduction::LiteralMax => terms.fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Sum over steps of the worst neighbor's `sigmoid(-alpha d - beta)`.
pub fn collision_cost(ego: &[AgentState], neighbors: &[Vec<AgentState>], weights: &CostWeights) -> Result<f64> {
    let mut total = 0.0;
    for (k, e) in ego.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for n in neighbors {
            if let Some(o) = n.get(k) {
                let d = corner_distance(e, o, weights.reduction)?;
                worst = worst.max(sigmoid(-weights.alpha * d - weights.beta));
            }
        }
        total += worst;
    }
    Ok(total)
}

/// Distance map with its floating-point plane, ready for footprint sampling.
#[derive(Clone, Debug)]
pub struct CostMap {
    pub distance: DistanceMap,
    plane: Vec<f64>,
}

impl CostMap {
    pub fn new(distance: DistanceMap) -> Self {
        let plane = distance.as_f64();
        Self { distance, plane }
    }

    pub fn from_grid(grid: &SemanticGrid) -> Result<Self> {
        Ok(Self::new(DistanceMap::from_grid(grid, DEFAULT_SATURATION)?))
    }

    pub fn footprint(&self, s: &AgentState) -> f64 {
        self.distance
            .footprint_mean(&self.plane, s.x, s.y, s.heading, s.length, s.width)
    }
}

/// Sum over steps of the mean distance-map value under the vehicle footprint.
pub fn offroad_cost(ego: &[AgentState], map: &CostMap) -> f64 {
    ego.iter().map(|s| map.footprint(s)).sum()
}

/// A sampled goal with the controls the policy produced for it and the resulting trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    pub goal: GoalPose,
    pub controls: Vec<Control>,
    /// States at `t+1 ..= t+H` in world coordinates.
    pub trajectory: Vec<AgentState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// A single candidate had the lowest cost.
    Unique,
    /// Equal costs, resolved by the highest goal log-likelihood.
    Likelihood,
    /// Equal costs and likelihoods, resolved by the lowest index.
    Index,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDecision {
    pub chosen: usize,
    pub total: Vec<f64>,
    pub collision: Vec<f64>,
    pub offroad: Vec<f64>,
    pub tie_break: TieBreak,
}

/// Picks the candidate with the lowest weighted cost; neighbor predictions
/// are shared by all candidates.
pub fn select_action(
    candidates: &[CandidatePlan],
    neighbors: &[Vec<AgentState>],
    map: &CostMap,
    weights: &CostWeights,
) -> Result<PlanDecision> {
    if candidates.is_empty() {
        return Err(SimError::InvalidArgument("no candidate plans".into()));
    }
    let mut collision = Vec::with_capacity(candidates.len());
    let mut offroad = Vec::with_capacity(candidates.len());
    for c in candidates {
        collision.push(if weights.collision == 0.0 {
            0.0
        } else {
            collision_cost(&c.trajectory, neighbors, weights)?
        });
        offroad.push(if weights.offroad == 0.0 { 0.0 } else { offroad_cost(&c.trajectory, map) });
    }
    let total: Vec<f64> = collision
        .iter()
        .zip(&offroad)
        .map(|(c, o)| weights.collision * c + weights.offroad * o)
        .collect();
    let (chosen, tie_break) = argmin_with_ties(&total, candidates);
    Ok(PlanDecision {
        chosen,
        total,
        collision,
        offroad,
        tie_break,
    })
}

fn argmin_with_ties(total: &[f64], candidates: &[CandidatePlan]) -> (usize, TieBreak) {
    let best = total.iter().cloned().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..total.len()).filter(|&i| total[i] == best).collect();
    if tied.len() == 1 {
        return (tied[0], TieBreak::Unique);
    }
    let top = tied
        .iter()
        .map(|&i| candidates[i].goal.log_likelihood)
        .fold(f64::NEG_INFINITY, f64::max);
    let likely: Vec<usize> = tied
        .into_iter()
        .filter(|&i| candidates[i].goal.log_likelihood == top)
        .collect();
    if likely.len() == 1 {
        (likely[0], TieBreak::Likelihood)
    } else {
        (likely[0], TieBreak::Index)
    }
}
