use nncore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::raster::grid::{
    encode_unit, SemanticGrid, LAYER_CENTERLINE, LAYER_DIR_COS, LAYER_DIR_SIN, LAYER_DRIVABLE,
    SEMANTIC_LAYERS,
};
use crate::world::{AgentId, AgentState, Pose, SceneLog};

/// Geometry of the ego-centered input raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    /// Side length in pixels; must be divisible by 16 for the backbone.
    pub size: usize,
    pub pixel_size: f64,
    /// Past steps in addition to the current one.
    pub history: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            size: 96,
            pixel_size: 0.5,
            history: 10,
        }
    }
}

impl RasterConfig {
    pub fn channels(&self) -> usize {
        SEMANTIC_LAYERS + self.history + 1
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(16) {
            return Err(SimError::Config(format!(
                "raster size {} must be a positive multiple of 16",
                self.size
            )));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(SimError::Config(format!("raster pixel size {}", self.pixel_size)));
        }
        Ok(())
    }

    /// Ego-frame center of pixel `(row, col)`. The ego sits at the center of
    /// pixel `(size/2, size/2)`; rows grow with ego-frame `y`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.size / 2) as f64;
        (
            (col as f64 - half) * self.pixel_size,
            (row as f64 - half) * self.pixel_size,
        )
    }

    /// Continuous `(col, row)` of an ego-frame point.
    pub fn pixel_coords(&self, x: f64, y: f64) -> (f64, f64) {
        let half = (self.size / 2) as f64;
        (x / self.pixel_size + half, y / self.pixel_size + half)
    }

    /// Flat index `row * size + col` of the cell containing an ego-frame point.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let (u, v) = self.pixel_coords(x, y);
        let (c, r) = ((u + 0.5).floor(), (v + 0.5).floor());
        let n = self.size as f64;
        if (0.0..n).contains(&c) && (0.0..n).contains(&r) {
            Some(r as usize * self.size + c as usize)
        } else {
            None
        }
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        self.pixel_center(cell / self.size, cell % self.size)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some()
    }
}

/// Past poses of one agent in the ego frame, oldest first; `None` where absent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub agent_id: AgentId,
    pub poses: Vec<Option<Pose>>,
}

/// Everything an agent observes at one decision step.
#[derive(Clone, Debug)]
pub struct DecisionContext {
    pub ego_id: AgentId,
    pub step: usize,
    pub ego: AgentState,
    /// `[channels, size, size]` raster.
    pub raster: Tensor,
    /// Other agents whose centers fall inside the window at `step` (world frame).
    pub neighbors: Vec<AgentState>,
    /// Ego first, then visible neighbors in id order.
    pub history: Vec<AgentTrack>,
}

/// Agents other than `ego` whose centers lie inside the raster window.
pub fn visible_neighbors(ego: &AgentState, states: &[AgentState], cfg: &RasterConfig) -> Vec<AgentState> {
    let pose = ego.pose();
    states
        .iter()
        .filter(|s| s.agent_id != ego.agent_id)
        .filter(|s| {
            let (x, y) = pose.to_local(s.x, s.y);
            cfg.contains(x, y)
        })
        .copied()
        .collect()
}

/// Fills an oriented box into `plane` using half-open pixel-center containment.
fn fill_box(plane: &mut [f64], cfg: &RasterConfig, rel: &Pose, length: f64, width: f64) {
    let (s, c) = rel.heading.sin_cos();
    let (hl, hw) = (length / 2.0, width / 2.0);
    let ext_x = hl * c.abs() + hw * s.abs();
    let ext_y = hl * s.abs() + hw * c.abs();
    let (u0, v0) = cfg.pixel_coords(rel.x - ext_x, rel.y - ext_y);
    let (u1, v1) = cfg.pixel_coords(rel.x + ext_x, rel.y + ext_y);
    let n = cfg.size as f64;
    let c0 = u0.floor().clamp(0.0, n) as usize;
    let c1 = (u1.ceil() + 1.0).clamp(0.0, n) as usize;
    let r0 = v0.floor().clamp(0.0, n) as usize;
    let r1 = (v1.ceil() + 1.0).clamp(0.0, n) as usize;
    for r in r0..r1 {
        for col in c0..c1 {
            let (px, py) = cfg.pixel_center(r, col);
            let (dx, dy) = (px - rel.x, py - rel.y);
            let lx = c * dx + s * dy;
            let ly = -s * dx + c * dy;
            if (-hl..hl).contains(&lx) && (-hw..hw).contains(&ly) {
                plane[r * cfg.size + col] = 1.0;
            }
        }
    }
}

/// Rasterizes the map and `frames` (oldest first, `history + 1` of them,
/// empty where no data exists) in the frame of `ego`.
pub fn rasterize_frames(
    grid: &SemanticGrid,
    ego: &AgentState,
    frames: &[&[AgentState]],
    cfg: &RasterConfig,
) -> Result<Tensor> {
    if frames.len() != cfg.history + 1 {
        return Err(SimError::InvalidArgument(format!(
            "expected {} history frames, got {}",
            cfg.history + 1,
            frames.len()
        )));
    }
    let n = cfg.size;
    let plane = n * n;
    let mut data = vec![0.0; cfg.channels() * plane];
    let pose = ego.pose();
    for r in 0..n {
        for col in 0..n {
            let (lx, ly) = cfg.pixel_center(r, col);
            let (wx, wy) = pose.to_world(lx, ly);
            let Some((gr, gc)) = grid.pixel_index(wx, wy) else {
                continue;
            };
            let i = r * n + col;
            data[LAYER_DRIVABLE * plane + i] = grid.get(LAYER_DRIVABLE, gr, gc);
            if let Some(h) = grid.lane_heading(gr, gc) {
                let rel = h - ego.heading;
                data[LAYER_CENTERLINE * plane + i] = 1.0;
                data[LAYER_DIR_COS * plane + i] = encode_unit(rel.cos());
                data[LAYER_DIR_SIN * plane + i] = encode_unit(rel.sin());
            }
        }
    }
    for (k, frame) in frames.iter().enumerate() {
        let off = (SEMANTIC_LAYERS + k) * plane;
        for s in frame.iter() {
            let rel = pose.relative(&s.pose());
            fill_box(&mut data[off..off + plane], cfg, &rel, s.length, s.width);
        }
    }
    Ok(Tensor::new(vec![cfg.channels(), n, n], data)?)
}

/// Builds the decision context of `ego_id` at step `t` of a log.
pub fn rasterize_context(
    log: &SceneLog,
    grid: &SemanticGrid,
    ego_id: AgentId,
    t: usize,
    cfg: &RasterConfig,
) -> Result<DecisionContext> {
    let ego = *log
        .state(ego_id, t)
        .ok_or(SimError::MissingAgent { agent: ego_id, step: t })?;
    let empty: &[AgentState] = &[];
    let frames: Vec<&[AgentState]> = (0..=cfg.history)
        .map(|k| {
            (t + k)
                .checked_sub(cfg.history)
                .and_then(|step| log.steps.get(step))
                .map_or(empty, |f| f.as_slice())
        })
        .collect();
    let raster = rasterize_frames(grid, &ego, &frames, cfg)?;
    let neighbors = visible_neighbors(&ego, &log.steps[t], cfg);
    let pose = ego.pose();
    let history = std::iter::once(ego_id)
        .chain(neighbors.iter().map(|s| s.agent_id))
        .map(|id| AgentTrack {
            agent_id: id,
            poses: (0..=cfg.history)
                .map(|k| {
                    (t + k)
                        .checked_sub(cfg.history)
                        .and_then(|step| log.state(id, step))
                        .map(|s| pose.relative(&s.pose()))
                })
                .collect(),
        })
        .collect();
    Ok(DecisionContext {
        ego_id,
        step: t,
        ego,
        raster,
        neighbors,
        history,
    })
}

/// Goal-map cell and residual of an ego-frame goal point, if inside the window.
pub fn goal_cell(cfg: &RasterConfig, goal: &Pose) -> Option<(usize, f64, f64)> {
    let cell = cfg.cell_of(goal.x, goal.y)?;
    let (cx, cy) = cfg.cell_center(cell);
    Some((cell, goal.x - cx, goal.y - cy))
}

