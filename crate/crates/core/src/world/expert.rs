//! Synthetic expert driver: pure-pursuit steering along a lane route plus
//! intelligent-driver-model (IDM) speed control, with a first-come
//! reservation of the intersection box on four-way maps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dynamics::{step, Control, Limits};
use crate::error::{Result, SimError};
use crate::raster::SemanticGrid;
use crate::simengine::detect_collisions;
use crate::world::map::{gen_map, Lane, LaneGraph, MapGeometry, MapSpec, SLOT_SPACING};
use crate::world::types::{AgentId, AgentState, EpisodeMeta, SceneLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Free-flow speed, m/s.
    pub v0: f64,
    /// Time headway, s.
    pub time_headway: f64,
    /// Minimum gap, m.
    pub s0: f64,
    pub accel: f64,
    pub decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 12.0,
            time_headway: 1.5,
            s0: 2.0,
            accel: 1.5,
            decel: 2.0,
        }
    }
}

impl IdmParams {
    /// IDM acceleration for speed `v`, desired speed `v_des` and an optional
    /// leader `(gap, closing speed)`.
    pub fn acceleration(&self, v: f64, v_des: f64, leader: Option<(f64, f64)>) -> f64 {
        let free = 1.0 - (v / v_des.max(0.1)).powi(4);
        let interaction = leader.map_or(0.0, |(gap, dv)| {
            let s_star = self.s0
                + (v * self.time_headway + v * dv / (2.0 * (self.accel * self.decel).sqrt())).max(0.0);
            (s_star / gap.max(0.1)).powi(2)
        });
        self.accel * (free - interaction)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub idm: IdmParams,
    /// Pure-pursuit lookahead in seconds of travel.
    pub lookahead_time: f64,
    pub min_lookahead: f64,
    /// Comfortable lateral acceleration used to slow down for curves, m/s^2.
    pub lateral_accel: f64,
    /// Std of Gaussian jitter added to logged positions; 0 disables it.
    pub label_noise: f64,
    pub limits: Limits,
    pub spawn_speed: (f64, f64),
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            lookahead_time: 1.5,
            min_lookahead: 3.0,
            lateral_accel: 2.5,
            label_noise: 0.0,
            limits: Limits::default(),
            spawn_speed: (6.0, 10.0),
        }
    }
}

/// Leaders are searched this far ahead along the route.
const LEADER_RANGE: f64 = 80.0;
const LEADER_LATERAL: f64 = 2.0;
/// Agents this close to the intersection box compete for it.
const ZONE_APPROACH: f64 = 25.0;
/// Braking deceleration beyond which an agent counts as committed to the box.
const COMMIT_DECEL: f64 = 5.0;

/// Lane polyline with cumulative arc length and curvature.
struct Route {
    lane: Lane,
    arc: Vec<f64>,
    curvature: Vec<f64>,
    /// Arc-length interval inside the intersection box, if any.
    zone: Option<(f64, f64)>,
    approach: usize,
}

impl Route {
    fn new(lane: Lane, approach: usize, zone_half: Option<f64>) -> Self {
        let arc = lane.arc_lengths();
        let n = lane.points.len();
        let mut curvature = vec![0.0; n];
        for i in 1..n.saturating_sub(1) {
            let dh = nncore::wrap_angle(lane.headings[i] - lane.headings[i - 1]);
            let ds = (arc[i + 1] - arc[i - 1]) / 2.0;
            if ds > 0.0 {
                curvature[i] = (dh / ds).abs();
            }
        }
        let zone = zone_half.and_then(|s| {
            let inside: Vec<usize> = (0..n)
                .filter(|&i| lane.points[i].0.abs() <= s && lane.points[i].1.abs() <= s)
                .collect();
            Some((arc[*inside.first()?], arc[*inside.last()?]))
        });
        Self {
            lane,
            arc,
            curvature,
            zone,
            approach,
        }
    }

    fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Arc length and signed lateral offset of the closest point on the
    /// polyline, searching segments whose start lies in `[s_lo, s_hi]`.
    fn project(&self, x: f64, y: f64, s_lo: f64, s_hi: f64) -> (f64, f64) {
        let pts = &self.lane.points;
        let lo = self.arc.partition_point(|&a| a < s_lo).saturating_sub(1);
        let hi = self.arc.partition_point(|&a| a <= s_hi).min(pts.len() - 1);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in lo..hi.max(lo + 1).min(pts.len() - 1) {
            let (a, b) = (pts[i], pts[i + 1]);
            let (ex, ey) = (b.0 - a.0, b.1 - a.1);
            let len2 = ex * ex + ey * ey;
            let t = (((x - a.0) * ex + (y - a.1) * ey) / len2).clamp(0.0, 1.0);
            let (px, py) = (a.0 + t * ex, a.1 + t * ey);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            if d2 < best.0 {
                let side = ex * (y - a.1) - ey * (x - a.0);
                best = (d2, self.arc[i] + t * len2.sqrt(), d2.sqrt().copysign(side));
            }
        }
        (best.1, best.2)
    }

    /// Highest speed from which the curves ahead can be reached at
    /// `lateral_accel` with comfortable braking.
    fn curve_speed(&self, s: f64, horizon: f64, lateral_accel: f64, decel: f64, cap: f64) -> f64 {
        let lo = self.arc.partition_point(|&a| a < s);
        let mut v = cap;
        for i in lo..self.arc.len() {
            let d = self.arc[i] - s;
            if d > horizon {
                break;
            }
            if self.curvature[i] > 1e-6 {
                let vc = (lateral_accel / self.curvature[i]).sqrt();
                v = v.min((vc * vc + 2.0 * decel * d).sqrt());
            }
        }
        v
    }
}

struct Driver {
    id: AgentId,
    route: usize,
    s: f64,
    state: AgentState,
    alive: bool,
}

struct Spawn {
    id: AgentId,
    route: usize,
    s: f64,
    speed: f64,
    length: f64,
    width: f64,
}

fn build_routes(spec: &MapSpec, graph: &LaneGraph) -> Vec<Route> {
    let zone_half = match spec.geometry {
        MapGeometry::FourWay {
            lane_width,
            corner_radius,
            ..
        } => Some(lane_width + corner_radius),
        _ => None,
    };
    let mut approach_of = vec![0; graph.lanes.len()];
    for (a, sp) in graph.spawns.iter().enumerate() {
        for &l in &sp.lanes {
            approach_of[l] = a;
        }
    }
    graph
        .lanes
        .iter()
        .map(|l| Route::new(l.clone(), approach_of[l.id], zone_half))
        .collect()
}

fn plan_spawns(graph: &LaneGraph, routes: &[Route], n: usize, cfg: &ExpertConfig, rng: &mut ChaCha8Rng) -> Vec<Spawn> {
    let mut slots: Vec<(usize, usize)> = graph
        .spawns
        .iter()
        .enumerate()
        .flat_map(|(i, sp)| (0..sp.slots).map(move |k| (i, k)))
        .collect();
    slots.shuffle(rng);
    slots.truncate(n);
    slots.sort_unstable();
    slots
        .into_iter()
        .enumerate()
        .map(|(id, (sp, k))| {
            let lanes = &graph.spawns[sp].lanes;
            let route = lanes[rng.gen_range(0..lanes.len())];
            let s = k as f64 * SLOT_SPACING + rng.gen_range(0.0..5.0);
            let cap = routes[route].curve_speed(s, 60.0, cfg.lateral_accel, cfg.idm.decel, cfg.idm.v0);
            let (lo, hi) = cfg.spawn_speed;
            Spawn {
                id: id as AgentId,
                route,
                s,
                speed: rng.gen_range(lo..hi).min(cap),
                length: 4.5 + rng.gen_range(-0.3..0.3),
                width: 1.8 + rng.gen_range(-0.1..0.1),
            }
        })
        .collect()
}

/// Intersection box bookkeeping for one step: the approach allowed to enter.
fn zone_owner(drivers: &[Driver], routes: &[Route], prev: Option<usize>) -> Option<usize> {
    let mut holding = Vec::new();
    let mut waiting: Option<(f64, AgentId, usize)> = None;
    for d in drivers.iter().filter(|d| d.alive) {
        let r = &routes[d.route];
        let Some((entry, exit)) = r.zone else { continue };
        let (front, rear) = (d.s + d.state.length / 2.0, d.s - d.state.length / 2.0);
        if rear > exit {
            continue;
        }
        let to_entry = entry - 0.5 - front;
        let braking = d.state.speed * d.state.speed / (2.0 * COMMIT_DECEL);
        if to_entry <= braking {
            holding.push(r.approach);
        } else if to_entry < ZONE_APPROACH {
            let tte = to_entry / d.state.speed.max(1.0);
            if waiting.is_none_or(|w| (tte, d.id) < (w.0, w.1)) {
                waiting = Some((tte, d.id, r.approach));
            }
        }
    }
    match prev {
        Some(a) if holding.contains(&a) => Some(a),
        _ => holding.iter().min().copied().or(waiting.map(|w| w.2)),
    }
}

fn control_for(d: &Driver, drivers: &[Driver], routes: &[Route], owner: Option<usize>, cfg: &ExpertConfig) -> Control {
    let r = &routes[d.route];
    let v = d.state.speed;
    // Longitudinal: nearest leader on the route, or the stop line when the box is taken.
    let mut leader: Option<(f64, f64)> = None;
    for o in drivers.iter().filter(|o| o.alive && o.id != d.id) {
        if (o.state.x - d.state.x).hypot(o.state.y - d.state.y) > LEADER_RANGE + 10.0 {
            continue;
        }
        let (so, lat) = r.project(o.state.x, o.state.y, d.s, d.s + LEADER_RANGE);
        if lat.abs() > LEADER_LATERAL || so <= d.s {
            continue;
        }
        let gap = so - d.s - (d.state.length + o.state.length) / 2.0;
        let along = o.state.speed * nncore::wrap_angle(o.state.heading - d.state.heading).cos();
        if leader.is_none_or(|l| gap < l.0) {
            leader = Some((gap, v - along));
        }
    }
    if let (Some((entry, _)), Some(a)) = (r.zone, owner) {
        let gap = entry - 0.5 - (d.s + d.state.length / 2.0);
        let braking = v * v / (2.0 * COMMIT_DECEL);
        if a != r.approach && gap > braking && gap < ZONE_APPROACH && leader.is_none_or(|l| gap < l.0) {
            leader = Some((gap.max(0.1), v));
        }
    }
    let v_des = r.curve_speed(d.s, 3.0 * v + 20.0, cfg.lateral_accel, cfg.idm.decel, cfg.idm.v0);
    let acc = cfg.idm.acceleration(v, v_des, leader);
    let speed_cmd = (v + acc * cfg.limits.dt).max(0.0);
    // Lateral: pure pursuit towards the route point one lookahead ahead.
    let ld = (cfg.lookahead_time * v).max(cfg.min_lookahead);
    let target = r.lane.pose_at(d.s + ld);
    let (tx, ty) = d.state.pose().to_local(target.x, target.y);
    let dist2 = tx * tx + ty * ty;
    let curvature = if dist2 > 1e-9 { 2.0 * ty / dist2 } else { 0.0 };
    Control::new(speed_cmd, speed_cmd * curvature)
}

/// Simulates the given spawns; returns per-step states (agents removed once
/// they reach the end of their route).
fn simulate(routes: &[Route], spawns: &[Spawn], steps: usize, cfg: &ExpertConfig) -> Result<Vec<Vec<AgentState>>> {
    let mut drivers: Vec<Driver> = spawns
        .iter()
        .map(|sp| {
            let p = routes[sp.route].lane.pose_at(sp.s);
            AgentState::new(sp.id, p.x, p.y, p.heading, sp.speed, sp.length, sp.width).map(|state| Driver {
                id: sp.id,
                route: sp.route,
                s: sp.s,
                state,
                alive: true,
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(steps);
    let mut owner = None;
    for t in 0..steps {
        out.push(drivers.iter().filter(|d| d.alive).map(|d| d.state).collect());
        if t + 1 == steps {
            break;
        }
        owner = zone_owner(&drivers, routes, owner);
        let controls: Vec<Control> = drivers
            .iter()
            .map(|d| {
                if d.alive {
                    control_for(d, &drivers, routes, owner, cfg)
                } else {
                    Control::default()
                }
            })
            .collect();
        for (d, u) in drivers.iter_mut().zip(controls) {
            if !d.alive {
                continue;
            }
            d.state = step(&d.state, u, &cfg.limits)?;
            let r = &routes[d.route];
            d.s = r.project(d.state.x, d.state.y, d.s - 5.0, d.s + 10.0).0;
            if d.s + d.state.length / 2.0 > r.length() - 1.0 {
                d.alive = false;
            }
        }
    }
    Ok(out)
}

/// First agent to remove so the remaining log is conflict-free.
fn first_conflict(frames: &[Vec<AgentState>], grid: &SemanticGrid) -> Option<AgentId> {
    for frame in frames {
        if let Some(c) = detect_collisions(frame).first() {
            return Some(c.agent.max(c.other));
        }
        if let Some(s) = frame.iter().find(|s| !grid.is_drivable(s.x, s.y)) {
            return Some(s.agent_id);
        }
    }
    None
}

/// Generates an expert log on the map described by `spec`.
pub fn gen_expert_log(spec: &MapSpec, n_agents: usize, duration_s: f64, seed: u64) -> Result<SceneLog> {
    gen_expert_log_with(spec, n_agents, duration_s, seed, &ExpertConfig::default())
}

pub fn gen_expert_log_with(
    spec: &MapSpec,
    n_agents: usize,
    duration_s: f64,
    seed: u64,
    cfg: &ExpertConfig,
) -> Result<SceneLog> {
    cfg.limits.validate()?;
    let (graph, grid) = gen_map(spec)?;
    let capacity = graph.spawn_capacity();
    if n_agents == 0 || n_agents > capacity {
        return Err(SimError::InvalidArgument(format!(
            "{n_agents} agents requested; map holds 1..={capacity}"
        )));
    }
    if !(duration_s >= 2.0 && duration_s.is_finite()) {
        return Err(SimError::InvalidArgument(format!("duration {duration_s} s below 2 s")));
    }
    let steps = (duration_s / cfg.limits.dt).round() as usize + 1;
    let routes = build_routes(spec, &graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spawns = plan_spawns(&graph, &routes, n_agents, cfg, &mut rng);
    let mut frames = simulate(&routes, &spawns, steps, cfg)?;
    let mut retries = 0;
    while let Some(bad) = first_conflict(&frames, &grid) {
        retries += 1;
        log::debug!("expert log seed {seed}: removing agent {bad} after conflict");
        spawns.retain(|s| s.id != bad);
        frames = simulate(&routes, &spawns, steps, cfg)?;
    }
    if cfg.label_noise > 0.0 {
        let normal = Normal::new(0.0, cfg.label_noise).map_err(|e| SimError::Config(e.to_string()))?;
        for s in frames.iter_mut().flatten() {
            s.x += normal.sample(&mut rng);
            s.y += normal.sample(&mut rng);
        }
    }
    let mut params = BTreeMap::new();
    params.insert("driver".into(), "pure_pursuit+idm".into());
    params.insert("duration_s".into(), duration_s.to_string());
    params.insert("idm_v0".into(), cfg.idm.v0.to_string());
    params.insert("label_noise".into(), cfg.label_noise.to_string());
    params.insert("removed_on_conflict".into(), retries.to_string());
    let log = SceneLog {
        map_id: spec.map_id(),
        map: spec.clone(),
        dt: cfg.limits.dt,
        steps: frames,
        meta: EpisodeMeta {
            seed,
            requested_agents: n_agents,
            spawned_agents: spawns.len(),
            congested: spawns.len() < n_agents,
            params,
        },
    };
    log.validate()?;
    Ok(log)
}
