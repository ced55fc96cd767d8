use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::raster::SemanticGrid;
use crate::simengine::{detect_offroad, CollisionType, FailureKind, Rollout};

/// Failure statistics in percent, averaged over rollouts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureRates {
    /// Agents with any failure event.
    pub fr: f64,
    pub coll_fr: f64,
    pub offroad_fr: f64,
    /// Agents with any contact, and with a contact of each type.
    pub coll_any: f64,
    pub coll_rear: f64,
    pub coll_front: f64,
    pub coll_side: f64,
    /// Mean fraction of frames an agent's centroid is off the drivable area.
    pub offroad: f64,
}

/// Rates of one rollout, percent of its agents.
pub fn rollout_failures(rollout: &Rollout, grid: &SemanticGrid) -> FailureRates {
    let agents = rollout.agent_ids();
    if agents.is_empty() {
        return FailureRates::default();
    }
    let n = agents.len() as f64;
    let pct = |set: BTreeSet<u32>| 100.0 * set.len() as f64 / n;
    let with = |pred: &dyn Fn(&crate::simengine::FailureEvent) -> bool| -> BTreeSet<u32> {
        rollout.events.iter().filter(|e| pred(e)).map(|e| e.agent_id).collect()
    };
    let coll = with(&|e| e.kind == FailureKind::Collision);
    let typed = |t: CollisionType| pct(with(&|e| e.collision == Some(t)));
    let flags = detect_offroad(&rollout.frames, grid);
    let offroad = flags
        .values()
        .map(|f| f.iter().filter(|&&x| x).count() as f64 / f.len().max(1) as f64)
        .sum::<f64>()
        / flags.len().max(1) as f64;
    FailureRates {
        fr: pct(with(&|_| true)),
        coll_fr: pct(coll.clone()),
        offroad_fr: pct(with(&|e| e.kind == FailureKind::Offroad)),
        coll_any: pct(coll),
        coll_rear: typed(CollisionType::Rear),
        coll_front: typed(CollisionType::Front),
        coll_side: typed(CollisionType::Side),
        offroad: 100.0 * offroad,
    }
}

/// Mean of the per-rollout rates.
pub fn failure_rates(rollouts: &[Rollout], grid: &SemanticGrid) -> FailureRates {
    mean_rates(&rollouts.iter().map(|r| rollout_failures(r, grid)).collect::<Vec<_>>())
}

pub fn mean_rates(rates: &[FailureRates]) -> FailureRates {
    if rates.is_empty() {
        return FailureRates::default();
    }
    let n = rates.len() as f64;
    let avg = |f: fn(&FailureRates) -> f64| rates.iter().map(f).sum::<f64>() / n;
    FailureRates {
        fr: avg(|r| r.fr),
        coll_fr: avg(|r| r.coll_fr),
        offroad_fr: avg(|r| r.offroad_fr),
        coll_any: avg(|r| r.coll_any),
        coll_rear: avg(|r| r.coll_rear),
        coll_front: avg(|r| r.coll_front),
        coll_side: avg(|r| r.coll_side),
        offroad: avg(|r| r.offroad),
    }
}
