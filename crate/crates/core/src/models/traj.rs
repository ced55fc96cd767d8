use nncore::layers::{Encoder, EncoderOutput, Mlp};
use nncore::loss::{l2_traj_loss, TrajTarget, TrajVars};
use nncore::{Graph, ParamStore, RoiRequest, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{decode_controls, decode_rollout_tape, rollout_controls, Control};
use crate::error::{Result, SimError};
use crate::models::config::ModelConfig;
use crate::raster::RoiWindow;
use crate::world::{AgentState, Pose};

pub const TRAJ_KIND: &str = "traj";

/// Goal or neighbor descriptor features: scaled position, heading as cos/sin, scaled speed.
const STATE_FEATURES: usize = 5;
/// Encoder stage cropped by the predictor (stride 4).
const ROI_STAGE: usize = 1;
const ROI_SAMPLES: usize = 7;

/// One neighbor to predict: the batch item it is seen from and its state in that item's ego frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborQuery {
    pub batch: usize,
    pub pose: Pose,
    pub speed: f64,
}

/// Policy, neighbor predictor and goal-free baseline heads over one shared encoder.
#[derive(Clone, Debug)]
pub struct TrajArch {
    config: ModelConfig,
    encoder: Encoder,
    policy: Mlp,
    predictor: Mlp,
    baseline: Mlp,
}

impl TrajArch {
    fn state_row(&self, pose: &Pose, speed: f64) -> [f64; STATE_FEATURES] {
        let r = self.config.half_extent();
        [
            pose.x / r,
            pose.y / r,
            pose.heading.cos(),
            pose.heading.sin(),
            speed / self.config.limits.v_max,
        ]
    }

    fn rows_input(&self, g: &mut Graph, rows: &[[f64; STATE_FEATURES]]) -> Result<Var> {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(g.input(Tensor::new(vec![rows.len(), STATE_FEATURES], data)?))
    }

    /// Rows of the global feature selected by batch index.
    fn global_rows(&self, g: &mut Graph, enc: &EncoderOutput, batch: &[usize]) -> Result<Var> {
        let f = self.config.backbone.feature;
        let idx: Vec<usize> = batch.iter().flat_map(|&b| (0..f).map(move |j| b * f + j)).collect();
        let flat = g.gather(enc.global, &idx)?;
        Ok(g.reshape(flat, &[batch.len(), f])?)
    }

    pub fn encode(&self, store: &ParamStore, g: &mut Graph, input: Var) -> Result<EncoderOutput> {
        Ok(self.encoder.forward(g, store, input)?)
    }

    /// Raw `[K, 2H]` policy outputs for goal `k` of batch item `batch[k]`.
    pub fn policy_raw(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        enc: &EncoderOutput,
        batch: &[usize],
        goals: &[Pose],
        speeds: &[f64],
    ) -> Result<Var> {
        let rows: Vec<_> = goals.iter().zip(speeds).map(|(p, &v)| self.state_row(p, v)).collect();
        let feats = self.global_rows(g, enc, batch)?;
        let desc = self.rows_input(g, &rows)?;
        let x = g.concat(&[feats, desc])?;
        Ok(self.policy.forward(g, store, x)?)
    }

    /// Raw `[R, 2H]` predictor outputs, in each neighbor's own frame.
    pub fn predictor_raw(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        enc: &EncoderOutput,
        queries: &[NeighborQuery],
    ) -> Result<Var> {
        let raster = &self.config.raster;
        let stride = (1usize << (ROI_STAGE + 1)) as f64;
        let extent = self.config.roi_extent / (raster.pixel_size * stride);
        let rois: Vec<RoiRequest> = queries
            .iter()
            .map(|q| {
                let (u, v) = raster.pixel_coords(q.pose.x, q.pose.y);
                RoiRequest {
                    batch: q.batch,
                    points: RoiWindow {
                        center: (u / stride, v / stride),
                        heading: q.pose.heading,
                        extent: (extent, extent),
                        samples: ROI_SAMPLES,
                    }
                    .lattice(),
                }
            })
            .collect();
        let crop = g.roi_align(enc.stages[ROI_STAGE], &rois)?;
        let batch: Vec<usize> = queries.iter().map(|q| q.batch).collect();
        let feats = self.global_rows(g, enc, &batch)?;
        let rows: Vec<_> = queries.iter().map(|q| self.state_row(&q.pose, q.speed)).collect();
        let desc = self.rows_input(g, &rows)?;
        let x = g.concat(&[crop, feats, desc])?;
        Ok(self.predictor.forward(g, store, x)?)
    }

    /// Raw `[N, 2H]` outputs of the goal-free baseline head.
    pub fn baseline_raw(&self, store: &ParamStore, g: &mut Graph, enc: &EncoderOutput, speeds: &[f64]) -> Result<Var> {
        let batch: Vec<usize> = (0..speeds.len()).collect();
        let feats = self.global_rows(g, enc, &batch)?;
        let rows: Vec<_> = speeds.iter().map(|&v| self.state_row(&Pose::new(0.0, 0.0, 0.0), v)).collect();
        let desc = self.rows_input(g, &rows)?;
        let x = g.concat(&[feats, desc])?;
        Ok(self.baseline.forward(g, store, x)?)
    }

    pub fn decode_tape(&self, g: &mut Graph, raw: Var, speeds: &[f64]) -> Result<TrajVars> {
        decode_rollout_tape(g, raw, speeds, &self.config.limits)
    }
}

/// Reference trajectories `[N, H]` from per-row pose lists.
pub fn traj_target(rows: &[&[Pose]]) -> Result<TrajTarget> {
    let h = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != h) {
        return Err(SimError::InvalidArgument("reference trajectories differ in length".into()));
    }
    let col = |f: fn(&Pose) -> f64| -> Result<Tensor> {
        Ok(Tensor::new(
            vec![rows.len(), h],
            rows.iter().flat_map(|r| r.iter().map(f)).collect(),
        )?)
    };
    Ok(TrajTarget {
        x: col(|p| p.x)?,
        y: col(|p| p.y)?,
        heading: col(|p| p.heading)?,
    })
}

/// Policy, predictor and baseline supervision for one batch.
pub struct TrajBatch<'a> {
    pub speeds: Vec<f64>,
    pub goals: Vec<Pose>,
    pub futures: Vec<&'a [Pose]>,
    pub neighbors: Vec<NeighborQuery>,
    /// Neighbor futures in each neighbor's own start frame.
    pub neighbor_futures: Vec<Vec<Pose>>,
}

/// Loss components of one batch: policy, predictor (if any neighbors) and baseline.
pub struct TrajLosses {
    pub policy: Var,
    pub predictor: Option<Var>,
    pub baseline: Var,
}

#[derive(Clone, Debug)]
pub struct TrajNet {
    pub config: ModelConfig,
    pub arch: TrajArch,
    pub store: ParamStore,
}

impl TrajNet {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.raster.channels();
        let encoder = Encoder::new(&mut store, "traj.enc", c, &config.backbone, &mut rng)?;
        let f = config.backbone.feature;
        let out = 2 * config.horizon;
        let h = config.hidden;
        let policy = Mlp::new(&mut store, "traj.policy", &[f + STATE_FEATURES, h, h, out], &mut rng)?;
        let roi = config.backbone.stages[ROI_STAGE] * ROI_SAMPLES * ROI_SAMPLES;
        let predictor = Mlp::new(&mut store, "traj.predictor", &[roi + f + STATE_FEATURES, h, h, out], &mut rng)?;
        let baseline = Mlp::new(&mut store, "traj.baseline", &[f + STATE_FEATURES, h, h, out], &mut rng)?;
        Ok(Self {
            config: config.clone(),
            arch: TrajArch {
                config: config.clone(),
                encoder,
                policy,
                predictor,
                baseline,
            },
            store,
        })
    }
}

impl TrajArch {
    pub fn losses(&self, store: &ParamStore, g: &mut Graph, input: Var, batch: &TrajBatch) -> Result<TrajLosses> {
        let enc = self.encode(store, g, input)?;
        let n = batch.speeds.len();
        let idx: Vec<usize> = (0..n).collect();
        let raw = self.policy_raw(store, g, &enc, &idx, &batch.goals, &batch.speeds)?;
        let traj = self.decode_tape(g, raw, &batch.speeds)?;
        let policy = l2_traj_loss(g, &traj, &traj_target(&batch.futures)?)?;
        let predictor = if batch.neighbors.is_empty() {
            None
        } else {
            let raw = self.predictor_raw(store, g, &enc, &batch.neighbors)?;
            let speeds: Vec<f64> = batch.neighbors.iter().map(|q| q.speed).collect();
            let traj = self.decode_tape(g, raw, &speeds)?;
            let rows: Vec<&[Pose]> = batch.neighbor_futures.iter().map(|f| f.as_slice()).collect();
            Some(l2_traj_loss(g, &traj, &traj_target(&rows)?)?)
        };
        let raw = self.baseline_raw(store, g, &enc, &batch.speeds)?;
        let traj = self.decode_tape(g, raw, &batch.speeds)?;
        let baseline = l2_traj_loss(g, &traj, &traj_target(&batch.futures)?)?;
        Ok(TrajLosses {
            policy,
            predictor,
            baseline,
        })
    }
}

/// Splits a `[K, 2H]` raw output block into per-row controls.
pub fn raw_to_controls(raw: &Tensor, speeds: &[f64], config: &ModelConfig) -> Vec<Vec<Control>> {
    let w = 2 * config.horizon;
    raw.data()
        .chunks(w)
        .zip(speeds)
        .map(|(r, &v)| decode_controls(r, v, &config.limits))
        .collect()
}

/// Frozen inference view over an encoded batch.
pub struct EncodedBatch<'a> {
    net: &'a TrajNet,
    graph: Graph,
    enc: EncoderOutput,
}

impl TrajNet {
    /// Runs the shared encoder once for a batch of `[C, S, S]` rasters.
    pub fn encode(&self, rasters: &[Tensor]) -> Result<EncodedBatch<'_>> {
        let mut graph = Graph::new();
        let x = graph.input(Tensor::stack(rasters)?);
        let enc = self.arch.encode(&self.store, &mut graph, x)?;
        Ok(EncodedBatch { net: self, graph, enc })
    }
}

impl EncodedBatch<'_> {
    /// Controls for each `(batch item, goal, start speed)`.
    pub fn policy(&mut self, batch: &[usize], goals: &[Pose], speeds: &[f64]) -> Result<Vec<Vec<Control>>> {
        if goals.is_empty() {
            return Ok(Vec::new());
        }
        let raw = self
            .net
            .arch
            .policy_raw(&self.net.store, &mut self.graph, &self.enc, batch, goals, speeds)?;
        Ok(raw_to_controls(self.graph.value(raw), speeds, &self.net.config))
    }

    /// Predicted world-frame trajectories of `neighbors` as seen from each
    /// batch item's ego; one entry per query.
    pub fn predict(&mut self, queries: &[NeighborQuery], world: &[AgentState]) -> Result<Vec<Vec<AgentState>>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let raw = self
            .net
            .arch
            .predictor_raw(&self.net.store, &mut self.graph, &self.enc, queries)?;
        let speeds: Vec<f64> = queries.iter().map(|q| q.speed).collect();
        let controls = raw_to_controls(self.graph.value(raw), &speeds, &self.net.config);
        controls
            .iter()
            .zip(world)
            .map(|(u, s)| rollout_controls(s, u, &self.net.config.limits))
            .collect()
    }

    pub fn baseline(&mut self, speeds: &[f64]) -> Result<Vec<Vec<Control>>> {
        let raw = self
            .net
            .arch
            .baseline_raw(&self.net.store, &mut self.graph, &self.enc, speeds)?;
        Ok(raw_to_controls(self.graph.value(raw), speeds, &self.net.config))
    }
}
