use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

use crate::world::{AgentId, AgentState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionType {
    Front,
    Rear,
    Side,
}

/// One side of a contact: `agent` touched `other`, classified from `agent`'s view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub agent: AgentId,
    pub other: AgentId,
    pub kind: CollisionType,
}

fn project(corners: &[(f64, f64); 4], axis: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in corners {
        let p = x * axis.0 + y * axis.1;
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

/// Separating-axis test on the closed boxes; touching counts as overlap.
pub fn boxes_overlap(a: &AgentState, b: &AgentState) -> bool {
    penetration_depth(a, b).is_some()
}

/// Smallest overlap of the two boxes' projections over the four box axes,
/// or `None` when some axis separates them. Touching boxes have depth 0.
pub fn penetration_depth(a: &AgentState, b: &AgentState) -> Option<f64> {
    let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
    if (a.x - b.x).hypot(a.y - b.y) > reach {
        return None;
    }
    let (ca, cb) = (a.corners(), b.corners());
    let mut depth = f64::INFINITY;
    for h in [a.heading, b.heading] {
        let (s, c) = h.sin_cos();
        for axis in [(c, s), (-s, c)] {
            let (alo, ahi) = project(&ca, axis);
            let (blo, bhi) = project(&cb, axis);
            if ahi < blo || bhi < alo {
                return None;
            }
            depth = depth.min((ahi - blo).min(bhi - alo));
        }
    }
    Some(depth)
}

/// Classifies a contact by the bearing of `other`'s center in `ego`'s frame.
pub fn collision_type(ego: &AgentState, other: &AgentState) -> CollisionType {
    let (x, y) = ego.pose().to_local(other.x, other.y);
    let phi = y.atan2(x).abs();
    if phi < FRAC_PI_4 {
        CollisionType::Front
    } else if phi > 3.0 * FRAC_PI_4 {
        CollisionType::Rear
    } else {
        CollisionType::Side
    }
}

/// All overlapping pairs at one step, reported once from each side.
pub fn detect_collisions(states: &[AgentState]) -> Vec<Contact> {
    let mut out = Vec::new();
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let (a, b) = (&states[i], &states[j]);
            if boxes_overlap(a, b) {
                out.push(Contact {
                    agent: a.agent_id,
                    other: b.agent_id,
                    kind: collision_type(a, b),
                });
                out.push(Contact {
                    agent: b.agent_id,
                    other: a.agent_id,
                    kind: collision_type(b, a),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(id: AgentId, x: f64, y: f64, h: f64) -> AgentState {
        AgentState::new(id, x, y, h, 0.0, 4.0, 2.0).unwrap()
    }

    #[test]
    fn distant_boxes_do_not_touch() {
        assert!(detect_collisions(&[car(0, 0.0, 0.0, 0.0), car(1, 100.0, 0.0, 0.0)]).is_empty());
    }

    #[test]
    fn coincident_boxes_are_front_contacts() {
        let c = detect_collisions(&[car(0, 0.0, 0.0, 0.0), car(1, 0.0, 0.0, 0.0)]);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|k| k.kind == CollisionType::Front));
    }

    #[test]
    fn bearing_classes() {
        let ego = car(0, 0.0, 0.0, 0.0);
        assert_eq!(collision_type(&ego, &car(1, 3.0, 0.5, 0.0)), CollisionType::Front);
        assert_eq!(collision_type(&ego, &car(1, -3.0, 0.5, 0.0)), CollisionType::Rear);
        assert_eq!(collision_type(&ego, &car(1, 0.5, 2.0, 0.0)), CollisionType::Side);
    }

    #[test]
    fn rotated_corner_gap() {
        // Diamond just clear of an axis-aligned box along the diagonal axis only.
        let a = car(0, 0.0, 0.0, 0.0);
        let b = AgentState::new(1, 2.0 + 1.42, 0.0, FRAC_PI_4, 0.0, 2.0, 2.0).unwrap();
        assert!(!boxes_overlap(&a, &b));
        let c = AgentState::new(1, 2.0 + 1.40, 0.0, FRAC_PI_4, 0.0, 2.0, 2.0).unwrap();
        assert!(boxes_overlap(&a, &c));
    }
}
