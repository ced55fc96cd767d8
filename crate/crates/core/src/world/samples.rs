use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::raster::{rasterize_context, DecisionContext, RasterConfig, SemanticGrid};
use crate::world::map::gen_map;
use crate::world::types::{AgentId, Pose, SceneLog};

/// Future of a neighbor visible at the anchor step, in the ego frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTarget {
    pub agent_id: AgentId,
    pub start: Pose,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub future: Vec<Pose>,
}

/// One training example; the raster is rebuilt on demand from the log.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: usize,
    pub agent: AgentId,
    pub step: usize,
    pub start_speed: f64,
    /// Recorded poses at `step+1 ..= step+H` in the ego frame at `step`.
    pub future: Vec<Pose>,
    /// Recorded pose at `step+H` in the ego frame.
    pub goal: Pose,
    /// Visible neighbors alive over the whole horizon.
    pub neighbors: Vec<NeighborTarget>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub samples: Vec<Sample>,
    /// Anchors whose future leaves the raster window.
    pub dropped: usize,
}

/// Anchors every `stride` steps from `history` while `t + horizon` stays in
/// the log, for every agent alive over `[t - history, t + horizon]`.
pub fn extract_samples(
    log: &SceneLog,
    scene: usize,
    stride: usize,
    horizon: usize,
    cfg: &RasterConfig,
) -> Result<Extraction> {
    if stride == 0 || horizon == 0 {
        return Err(SimError::InvalidArgument("stride and horizon must be positive".into()));
    }
    let h = cfg.history;
    let mut out = Extraction::default();
    if log.len() < h + horizon + 1 {
        log::warn!(
            "log of {} steps too short for history {h} and horizon {horizon}; no samples",
            log.len()
        );
        return Ok(out);
    }
    for id in log.agent_ids() {
        let (first, last) = log.lifespan(id).expect("listed agent has a lifespan");
        let mut t = h;
        while t + horizon < log.len() {
            if t >= first + h && t + horizon <= last {
                match make_sample(log, scene, id, t, horizon, cfg) {
                    Some(s) => out.samples.push(s),
                    None => out.dropped += 1,
                }
            }
            t += stride;
        }
    }
    out.samples.sort_by_key(|s| (s.step, s.agent));
    Ok(out)
}

fn make_sample(log: &SceneLog, scene: usize, id: AgentId, t: usize, horizon: usize, cfg: &RasterConfig) -> Option<Sample> {
    let ego = log.state(id, t)?;
    let frame = ego.pose();
    let future: Vec<Pose> = (1..=horizon)
        .map(|k| frame.relative(&log.state(id, t + k).expect("alive").pose()))
        .collect();
    if future.iter().any(|p| !cfg.contains(p.x, p.y)) {
        return None;
    }
    let neighbors = crate::raster::visible_neighbors(ego, &log.steps[t], cfg)
        .into_iter()
        .filter_map(|n| {
            let fut: Option<Vec<Pose>> = (1..=horizon)
                .map(|k| log.state(n.agent_id, t + k).map(|s| frame.relative(&s.pose())))
                .collect();
            Some(NeighborTarget {
                agent_id: n.agent_id,
                start: frame.relative(&n.pose()),
                speed: n.speed,
                length: n.length,
                width: n.width,
                future: fut?,
            })
        })
        .collect();
    Some(Sample {
        scene,
        agent: id,
        step: t,
        start_speed: ego.speed,
        goal: *future.last().expect("horizon >= 1"),
        future,
        neighbors,
    })
}

/// A scene log with its rasterized map.
#[derive(Clone, Debug)]
pub struct Scene {
    pub log: SceneLog,
    pub grid: SemanticGrid,
}

impl Scene {
    pub fn new(log: SceneLog) -> Result<Self> {
        let (_, grid) = gen_map(&log.map)?;
        Ok(Self { log, grid })
    }
}

/// Samples drawn from a set of scenes, with on-demand rasterization.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub samples: Vec<Sample>,
    pub dropped: usize,
    pub raster: RasterConfig,
    pub horizon: usize,
}

impl Dataset {
    pub fn build(scenes: Vec<Scene>, stride: usize, horizon: usize, raster: &RasterConfig) -> Result<Self> {
        let mut samples = Vec::new();
        let mut dropped = 0;
        for (i, sc) in scenes.iter().enumerate() {
            let ex = extract_samples(&sc.log, i, stride, horizon, raster)?;
            samples.extend(ex.samples);
            dropped += ex.dropped;
        }
        Ok(Self {
            scenes,
            samples,
            dropped,
            raster: raster.clone(),
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn context(&self, index: usize) -> Result<DecisionContext> {
        let s = &self.samples[index];
        let sc = &self.scenes[s.scene];
        rasterize_context(&sc.log, &sc.grid, s.agent, s.step, &self.raster)
    }

    /// Keeps only the listed samples (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            scenes: self.scenes.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dropped: 0,
            raster: self.raster.clone(),
            horizon: self.horizon,
        }
    }
}

/// Deterministic split of `n` items into (train, validation) index lists.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut val = idx.split_off(n - n_val.min(n));
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}
