//! Procedural road maps: straight multi-lane roads, constant-radius bends and
//! four-way intersections, with their lane graph and rasterized semantic grid.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Result, SimError};
use crate::raster::SemanticGrid;
use crate::world::types::Pose;

/// Spacing of generated centerline points.
const POINT_SPACING: f64 = 1.0;
/// Distance between consecutive spawn slots along a lane.
pub const SLOT_SPACING: f64 = 25.0;
const GRID_MARGIN: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapGeometry {
    /// One-way road along +x.
    Straight { length: f64, lanes: usize, lane_width: f64 },
    /// Lead-in straight, left-hand bend of `radius` (road center) sweeping
    /// `sweep` radians, lead-out straight.
    Arc {
        radius: f64,
        sweep: f64,
        lead: f64,
        lanes: usize,
        lane_width: f64,
    },
    /// Two-way crossing of four arms, one lane per direction, right-hand traffic.
    FourWay { arm: f64, lane_width: f64, corner_radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub geometry: MapGeometry,
    #[serde(default = "default_pixel_size")]
    pub pixel_size: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_pixel_size() -> f64 {
    0.5
}

impl MapSpec {
    pub fn new(geometry: MapGeometry, seed: u64) -> Self {
        Self {
            geometry,
            pixel_size: default_pixel_size(),
            seed,
        }
    }

    pub fn straight(length: f64, lanes: usize, seed: u64) -> Self {
        Self::new(
            MapGeometry::Straight {
                length,
                lanes,
                lane_width: 3.5,
            },
            seed,
        )
    }

    pub fn arc(radius: f64, sweep: f64, lead: f64, lanes: usize, seed: u64) -> Self {
        Self::new(
            MapGeometry::Arc {
                radius,
                sweep,
                lead,
                lanes,
                lane_width: 3.5,
            },
            seed,
        )
    }

    pub fn four_way(arm: f64, seed: u64) -> Self {
        Self::new(
            MapGeometry::FourWay {
                arm,
                lane_width: 3.5,
                corner_radius: 8.0,
            },
            seed,
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self.geometry {
            MapGeometry::Straight { .. } => "straight",
            MapGeometry::Arc { .. } => "arc",
            MapGeometry::FourWay { .. } => "four_way",
        }
    }

    /// Stable identifier derived from every field of the spec.
    pub fn map_id(&self) -> String {
        let body = serde_json::to_string(self).expect("map spec serializes");
        // FNV-1a; ids only need to be stable and readable.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in body.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{}-{:016x}", self.kind_name(), h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidGeometry(m));
        if !(self.pixel_size > 0.0 && self.pixel_size <= 2.0) {
            return bad(format!("pixel size {} outside (0, 2] m", self.pixel_size));
        }
        let lane_width = match self.geometry {
            MapGeometry::Straight { lane_width, .. }
            | MapGeometry::Arc { lane_width, .. }
            | MapGeometry::FourWay { lane_width, .. } => lane_width,
        };
        if !(3.0..=4.0).contains(&lane_width) {
            return bad(format!("lane width {lane_width} m outside 3-4 m"));
        }
        match self.geometry {
            MapGeometry::Straight { length, lanes, .. } => {
                if !(1..=6).contains(&lanes) {
                    return bad(format!("{lanes} lanes; expected 1-6"));
                }
                if length < 2.0 * SLOT_SPACING {
                    return bad(format!("road length {length} m too short"));
                }
            }
            MapGeometry::Arc {
                radius,
                sweep,
                lead,
                lanes,
                lane_width,
            } => {
                if !(1..=4).contains(&lanes) {
                    return bad(format!("{lanes} lanes; expected 1-4"));
                }
                if radius < 15.0 {
                    return bad(format!("arc radius {radius} m below 15 m"));
                }
                let inner = radius - lanes as f64 * lane_width / 2.0;
                if inner < 0.5 * radius {
                    return bad(format!(
                        "arc radius {radius} m too small for {lanes} lanes of {lane_width} m"
                    ));
                }
                if !(sweep > 0.0 && sweep <= PI) {
                    return bad(format!("arc sweep {sweep} rad outside (0, pi]"));
                }
                if lead < SLOT_SPACING {
                    return bad(format!("lead straight {lead} m too short"));
                }
            }
            MapGeometry::FourWay {
                arm, corner_radius, ..
            } => {
                if arm < 2.0 * SLOT_SPACING {
                    return bad(format!("arm length {arm} m too short"));
                }
                if !(4.0..=20.0).contains(&corner_radius) {
                    return bad(format!("corner radius {corner_radius} m outside 4-20 m"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneKind {
    Straight,
    Through,
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: usize,
    pub kind: LaneKind,
    pub points: Vec<(f64, f64)>,
    /// Travel direction at each point.
    pub headings: Vec<f64>,
}

impl Lane {
    fn from_points(id: usize, kind: LaneKind, raw: Vec<(f64, f64)>) -> Self {
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for p in raw {
            if points
                .last()
                .is_none_or(|q: &(f64, f64)| (p.0 - q.0).hypot(p.1 - q.1) > 1e-6)
            {
                points.push(p);
            }
        }
        let mut headings: Vec<f64> = points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0))
            .collect();
        headings.push(*headings.last().unwrap_or(&0.0));
        Self {
            id,
            kind,
            points,
            headings,
        }
    }

    /// Cumulative arc length at each point.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.points.len()];
        for i in 1..self.points.len() {
            let (a, b) = (self.points[i - 1], self.points[i]);
            s[i] = s[i - 1] + (b.0 - a.0).hypot(b.1 - a.1);
        }
        s
    }

    pub fn length(&self) -> f64 {
        *self.arc_lengths().last().unwrap_or(&0.0)
    }

    /// Pose at arc length `s`, extrapolated along the end headings outside `[0, length]`.
    pub fn pose_at(&self, s: f64) -> Pose {
        let arc = self.arc_lengths();
        let n = self.points.len();
        if s <= 0.0 {
            let h = self.headings[0];
            let p = self.points[0];
            return Pose::new(p.0 + s * h.cos(), p.1 + s * h.sin(), h);
        }
        if s >= arc[n - 1] {
            let h = self.headings[n - 1];
            let p = self.points[n - 1];
            let e = s - arc[n - 1];
            return Pose::new(p.0 + e * h.cos(), p.1 + e * h.sin(), h);
        }
        let i = arc.partition_point(|&a| a <= s).max(1) - 1;
        let seg = arc[i + 1] - arc[i];
        let f = if seg > 0.0 { (s - arc[i]) / seg } else { 0.0 };
        let (a, b) = (self.points[i], self.points[i + 1]);
        Pose::new(a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1), self.headings[i])
    }
}

/// Entry of one or more lanes where agents may be placed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnPoint {
    pub pose: Pose,
    /// Lanes (routes) starting at this spawn point.
    pub lanes: Vec<usize>,
    /// Number of agent slots spaced along the lanes.
    pub slots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<(f64, f64)>,
}

impl Polygon {
    fn rect(center: (f64, f64), heading: f64, length: f64, width: f64) -> Self {
        let p = Pose::new(center.0, center.1, heading);
        let (hl, hw) = (length / 2.0, width / 2.0);
        Self {
            points: vec![
                p.to_world(hl, hw),
                p.to_world(-hl, hw),
                p.to_world(-hl, -hw),
                p.to_world(hl, -hw),
            ],
        }
    }

    /// Inside test with the boundary counted as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        const EPS: f64 = 1e-9;
        let n = self.points.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[(i + 1) % n]);
            // On-segment check.
            let (ex, ey) = (b.0 - a.0, b.1 - a.1);
            let cross = ex * (y - a.1) - ey * (x - a.0);
            let len = ex.hypot(ey);
            if cross.abs() <= EPS * len.max(1.0) {
                let t = ((x - a.0) * ex + (y - a.1) * ey) / (len * len).max(1e-300);
                if (-EPS..=1.0 + EPS).contains(&t) {
                    return true;
                }
            }
            if (a.1 > y) != (b.1 > y) {
                let xi = a.0 + (y - a.1) * ex / ey;
                if x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.points {
            b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub lanes: Vec<Lane>,
    pub drivable: Vec<Polygon>,
    pub spawns: Vec<SpawnPoint>,
}

impl LaneGraph {
    pub fn is_drivable(&self, x: f64, y: f64) -> bool {
        self.drivable.iter().any(|p| p.contains(x, y))
    }

    pub fn spawn_capacity(&self) -> usize {
        self.spawns.iter().map(|s| s.slots).sum()
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.drivable {
            let q = p.bounds();
            b = (b.0.min(q.0), b.1.min(q.1), b.2.max(q.2), b.3.max(q.3));
        }
        b
    }
}

fn straight_points(from: (f64, f64), to: (f64, f64)) -> Vec<(f64, f64)> {
    let len = (to.0 - from.0).hypot(to.1 - from.1);
    let n = (len / POINT_SPACING).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let f = i as f64 / n as f64;
            (from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1))
        })
        .collect()
}

fn cubic_points(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)) -> Vec<(f64, f64)> {
    let approx = (p1.0 - p0.0).hypot(p1.1 - p0.1)
        + (p2.0 - p1.0).hypot(p2.1 - p1.1)
        + (p3.0 - p2.0).hypot(p3.1 - p2.1);
    let n = ((approx / POINT_SPACING).ceil() as usize * 2).max(4);
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
            (
                a * p0.0 + b * p1.0 + c * p2.0 + d * p3.0,
                a * p0.1 + b * p1.1 + c * p2.1 + d * p3.1,
            )
        })
        .collect()
}

fn build_straight(length: f64, lanes: usize, w: f64) -> LaneGraph {
    let half = lanes as f64 * w / 2.0;
    let mut out_lanes = Vec::new();
    let mut spawns = Vec::new();
    let slots = ((length / 3.0) / SLOT_SPACING).floor().max(1.0) as usize;
    for i in 0..lanes {
        let y = (i as f64 + 0.5) * w - half;
        out_lanes.push(Lane::from_points(i, LaneKind::Straight, straight_points((0.0, y), (length, y))));
        spawns.push(SpawnPoint {
            pose: Pose::new(0.0, y, 0.0),
            lanes: vec![i],
            slots,
        });
    }
    LaneGraph {
        lanes: out_lanes,
        drivable: vec![Polygon::rect((length / 2.0, 0.0), 0.0, length, 2.0 * half)],
        spawns,
    }
}

fn build_arc(radius: f64, sweep: f64, lead: f64, lanes: usize, w: f64) -> LaneGraph {
    let half = lanes as f64 * w / 2.0;
    // Road reference: (-lead, 0) -> (0, 0), left bend about (0, radius), lead-out.
    let end_dir = sweep;
    let arc_end = (radius * sweep.sin(), radius - radius * sweep.cos());
    let lane_path = |offset: f64| -> Vec<(f64, f64)> {
        // `offset` is lateral, positive to the left of travel.
        let r = radius - offset;
        let mut pts = straight_points((-lead, offset), (0.0, offset));
        let n = ((r * sweep / POINT_SPACING).ceil() as usize).max(2);
        for i in 1..=n {
            let phi = sweep * i as f64 / n as f64;
            pts.push((r * phi.sin(), radius - r * phi.cos()));
        }
        let start = *pts.last().unwrap();
        let dir = (end_dir.cos(), end_dir.sin());
        pts.extend(straight_points(start, (start.0 + lead * dir.0, start.1 + lead * dir.1)).into_iter().skip(1));
        pts
    };
    let mut out_lanes = Vec::new();
    let mut spawns = Vec::new();
    let slots = ((lead / 2.0) / SLOT_SPACING).floor().max(1.0) as usize;
    for i in 0..lanes {
        let offset = (i as f64 + 0.5) * w - half;
        out_lanes.push(Lane::from_points(i, LaneKind::Straight, lane_path(offset)));
        spawns.push(SpawnPoint {
            pose: Pose::new(-lead, offset, 0.0),
            lanes: vec![i],
            slots,
        });
    }
    // Annular sector, sampled finely enough that chords stay within a few mm.
    let n = ((sweep / 0.01).ceil() as usize).max(8);
    let mut sector = Vec::with_capacity(2 * n + 2);
    for i in 0..=n {
        let phi = sweep * i as f64 / n as f64;
        let r = radius + half;
        sector.push((r * phi.sin(), radius - r * phi.cos()));
    }
    for i in (0..=n).rev() {
        let phi = sweep * i as f64 / n as f64;
        let r = radius - half;
        sector.push((r * phi.sin(), radius - r * phi.cos()));
    }
    let out_center = (
        arc_end.0 + lead / 2.0 * end_dir.cos(),
        arc_end.1 + lead / 2.0 * end_dir.sin(),
    );
    LaneGraph {
        lanes: out_lanes,
        drivable: vec![
            Polygon::rect((-lead / 2.0, 0.0), 0.0, lead, 2.0 * half),
            Polygon { points: sector },
            Polygon::rect(out_center, end_dir, lead, 2.0 * half),
        ],
        spawns,
    }
}

/// Arm directions, counter-clockwise from east.
const ARMS: [f64; 4] = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];

fn build_four_way(arm: f64, w: f64, corner_radius: f64) -> LaneGraph {
    let s = w + corner_radius;
    let unit = |a: f64| (a.cos(), a.sin());
    let add = |p: (f64, f64), q: (f64, f64), k: f64| (p.0 + k * q.0, p.1 + k * q.1);
    let mut lanes = Vec::new();
    let mut spawns = Vec::new();
    let slots = ((arm / 2.0) / SLOT_SPACING).floor().max(1.0) as usize;
    for (a, &dir_a) in ARMS.iter().enumerate() {
        let (da, na) = (unit(dir_a), unit(dir_a + FRAC_PI_2));
        // Inbound lane runs along -da on the +na side.
        let start = add(add((0.0, 0.0), da, s + arm), na, w / 2.0);
        let entry = add(add((0.0, 0.0), da, s), na, w / 2.0);
        let mut ids = Vec::new();
        for (turn, kind) in [(2usize, LaneKind::Through), (3, LaneKind::Left), (1, LaneKind::Right)] {
            // Right-hand traffic: heading -da, a right turn exits on the arm
            // counter-clockwise of `a`, a left turn on the clockwise one.
            let b = match kind {
                LaneKind::Right => (a + 1) % 4,
                LaneKind::Left => (a + 3) % 4,
                _ => (a + turn) % 4,
            };
            let (db, nb) = (unit(ARMS[b]), unit(ARMS[b] + FRAC_PI_2));
            let exit = add(add((0.0, 0.0), db, s), nb, -w / 2.0);
            let far = add(exit, db, arm);
            let mut pts = straight_points(start, entry);
            if kind == LaneKind::Through {
                pts.extend(straight_points(entry, exit).into_iter().skip(1));
            } else {
                // Corner where the entry line meets the exit line.
                let (dx, dy) = (-da.0, -da.1);
                let det = dx * (-db.1) - dy * (-db.0);
                let rhs = (exit.0 - entry.0, exit.1 - entry.1);
                let t = (rhs.0 * (-db.1) - rhs.1 * (-db.0)) / det;
                let corner = add(entry, (dx, dy), t);
                const K: f64 = 0.5523;
                let c1 = (entry.0 + K * (corner.0 - entry.0), entry.1 + K * (corner.1 - entry.1));
                let c2 = (exit.0 + K * (corner.0 - exit.0), exit.1 + K * (corner.1 - exit.1));
                pts.extend(cubic_points(entry, c1, c2, exit).into_iter().skip(1));
            }
            pts.extend(straight_points(exit, far).into_iter().skip(1));
            let id = lanes.len();
            lanes.push(Lane::from_points(id, kind, pts));
            ids.push(id);
        }
        spawns.push(SpawnPoint {
            pose: Pose::new(start.0, start.1, dir_a + PI),
            lanes: ids,
            slots,
        });
    }
    let mut drivable = vec![Polygon::rect((0.0, 0.0), 0.0, 2.0 * s, 2.0 * s)];
    for &dir in &ARMS {
        // Arms overlap the center square by half a meter so the union has no seams.
        let c = add((0.0, 0.0), unit(dir), s + arm / 2.0 - 0.25);
        drivable.push(Polygon::rect(c, dir, arm + 0.5, 2.0 * w));
    }
    LaneGraph {
        lanes,
        drivable,
        spawns,
    }
}

/// Builds the lane graph and its semantic raster. Pure function of `spec`.
pub fn gen_map(spec: &MapSpec) -> Result<(LaneGraph, SemanticGrid)> {
    spec.validate()?;
    let graph = match spec.geometry {
        MapGeometry::Straight {
            length,
            lanes,
            lane_width,
        } => build_straight(length, lanes, lane_width),
        MapGeometry::Arc {
            radius,
            sweep,
            lead,
            lanes,
            lane_width,
        } => build_arc(radius, sweep, lead, lanes, lane_width),
        MapGeometry::FourWay {
            arm,
            lane_width,
            corner_radius,
        } => build_four_way(arm, lane_width, corner_radius),
    };
    let grid = rasterize_lane_graph(&graph, spec.pixel_size);
    Ok((graph, grid))
}

fn rasterize_lane_graph(graph: &LaneGraph, pixel_size: f64) -> SemanticGrid {
    let (x0, y0, x1, y1) = graph.bounds();
    let ox = ((x0 - GRID_MARGIN) / pixel_size).floor() * pixel_size;
    let oy = ((y0 - GRID_MARGIN) / pixel_size).floor() * pixel_size;
    let width = ((x1 + GRID_MARGIN - ox) / pixel_size).ceil() as usize;
    let height = ((y1 + GRID_MARGIN - oy) / pixel_size).ceil() as usize;
    let mut grid = SemanticGrid::new((ox, oy), width, height, pixel_size);
    for poly in &graph.drivable {
        let (bx0, by0, bx1, by1) = poly.bounds();
        let c0 = (((bx0 - ox) / pixel_size).floor().max(0.0) as usize).min(width);
        let c1 = (((bx1 - ox) / pixel_size).ceil().max(0.0) as usize).min(width);
        let r0 = (((by0 - oy) / pixel_size).floor().max(0.0) as usize).min(height);
        let r1 = (((by1 - oy) / pixel_size).ceil().max(0.0) as usize).min(height);
        for r in r0..r1 {
            for c in c0..c1 {
                let (x, y) = grid.world_from_pixel(c as f64, r as f64);
                if poly.contains(x, y) {
                    grid.set(crate::raster::LAYER_DRIVABLE, r, c, 1.0);
                }
            }
        }
    }
    for lane in &graph.lanes {
        for (i, win) in lane.points.windows(2).enumerate() {
            let (a, b) = (win[0], win[1]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            let n = ((len / (pixel_size / 4.0)).ceil() as usize).max(1);
            for k in 0..=n {
                let f = k as f64 / n as f64;
                let (x, y) = (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
                if let Some((r, c)) = grid.pixel_index(x, y) {
                    grid.mark_lane(r, c, lane.headings[i]);
                }
            }
        }
    }
    grid
}
