use nncore::layers::{Encoder, UNetDecoder};
use nncore::loss::spatial_cross_entropy;
use nncore::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::config::ModelConfig;
use crate::raster::{rasterize_frames, SemanticGrid};
use crate::world::{AgentState, SceneLog};

pub const OCCUPANCY_KIND: &str = "occupancy";

#[derive(Clone, Debug)]
pub struct OccupancyArch {
    encoder: Encoder,
    decoder: UNetDecoder,
    steps: usize,
    cells: usize,
}

impl OccupancyArch {
    /// `[N, T, G, G]` logits.
    pub fn forward(&self, store: &ParamStore, g: &mut Graph, input: Var) -> Result<Var> {
        let enc = self.encoder.forward(g, store, input)?;
        Ok(self.decoder.forward(g, store, input, &enc)?)
    }

    /// Mean over future steps of the per-step cross-entropy; `targets[n][k]`
    /// is the cell of sample `n` at step `k + 1`.
    pub fn loss(&self, store: &ParamStore, g: &mut Graph, input: Var, targets: &[Vec<usize>]) -> Result<Var> {
        let out = self.forward(store, g, input)?;
        let n = targets.len();
        let mut terms = Vec::with_capacity(self.steps);
        for k in 0..self.steps {
            let idx: Vec<usize> = (0..n)
                .flat_map(|i| (0..self.cells).map(move |c| (i * self.steps + k) * self.cells + c))
                .collect();
            let flat = g.gather(out, &idx)?;
            let logits = g.reshape(flat, &[n, self.cells])?;
            let cells: Vec<usize> = targets.iter().map(|t| t[k]).collect();
            terms.push(spatial_cross_entropy(g, logits, &cells)?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        Ok(g.scale(total, 1.0 / self.steps as f64))
    }
}

/// Per-step distribution of an agent's future cell on a coarse ego-centered grid.
#[derive(Clone, Debug)]
pub struct OccupancyNet {
    pub config: ModelConfig,
    pub arch: OccupancyArch,
    pub store: ParamStore,
}

/// Softmax-normalized occupancy maps, `probs[k][cell]` for step `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyPrediction {
    pub probs: Vec<Vec<f64>>,
}

impl OccupancyNet {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.raster.channels();
        let level = config.occupancy_level()?;
        let encoder = Encoder::new(&mut store, "occ.enc", c, &config.backbone, &mut rng)?;
        let decoder = UNetDecoder::new(
            &mut store,
            "occ.dec",
            c,
            &config.backbone,
            level,
            config.occupancy_steps,
            &mut rng,
        )?;
        let side = config.occupancy_side();
        Ok(Self {
            config: config.clone(),
            arch: OccupancyArch {
                encoder,
                decoder,
                steps: config.occupancy_steps,
                cells: side * side,
            },
            store,
        })
    }

    pub fn predict(&self, rasters: &[Tensor]) -> Result<Vec<OccupancyPrediction>> {
        if rasters.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::stack(rasters)?);
        let out = self.arch.forward(&self.store, &mut g, x)?;
        let cells = self.arch.cells;
        Ok(g.value(out)
            .data()
            .chunks(self.arch.steps * cells)
            .map(|item| OccupancyPrediction {
                probs: item.chunks(cells).map(softmax).collect(),
            })
            .collect())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodScore {
    pub score: f64,
    pub anchors: usize,
    /// Set when the trajectory was shorter than the prediction horizon.
    pub short: bool,
}

/// Receding-horizon likelihood of a trajectory set under the occupancy model:
/// at every `anchor_stride` steps each agent's visited cells over the next
/// `T` steps are scored by the predicted probability (0 outside the grid),
/// averaged over steps, then anchors, then agents.
pub fn likelihood_score(log: &SceneLog, grid: &SemanticGrid, net: &OccupancyNet, anchor_stride: usize) -> Result<LikelihoodScore> {
    let cfg = &net.config;
    let t_len = cfg.occupancy_steps;
    let n = log.len();
    let short = n < t_len + 1;
    let last_anchor = if short { 0 } else { n - 1 - t_len };
    let empty: &[AgentState] = &[];
    let mut per_agent: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
    let mut anchors = 0;
    let mut t = 0;
    while t <= last_anchor && t + 1 < n {
        let frames: Vec<&[AgentState]> = (0..=cfg.raster.history)
            .map(|k| {
                (t + k)
                    .checked_sub(cfg.raster.history)
                    .map_or(empty, |s| log.steps[s].as_slice())
            })
            .collect();
        let agents = &log.steps[t];
        let rasters = agents
            .iter()
            .map(|a| rasterize_frames(grid, a, &frames, &cfg.raster))
            .collect::<Result<Vec<_>>>()?;
        let preds = net.predict(&rasters)?;
        for (a, p) in agents.iter().zip(&preds) {
            let pose = a.pose();
            let mut sum = 0.0;
            let mut count = 0;
            for k in 1..=t_len.min(n - 1 - t) {
                let Some(s) = log.state(a.agent_id, t + k) else { continue };
                let local = pose.relative(&s.pose());
                sum += cfg
                    .occupancy_cell_of(local.x, local.y)
                    .map_or(0.0, |c| p.probs[k - 1][c]);
                count += 1;
            }
            if count > 0 {
                let e = per_agent.entry(a.agent_id).or_insert((0.0, 0));
                e.0 += sum / count as f64;
                e.1 += 1;
            }
        }
        anchors += 1;
        t += anchor_stride.max(1);
    }
    let score = if per_agent.is_empty() {
        0.0
    } else {
        per_agent.values().map(|(s, c)| s / *c as f64).sum::<f64>() / per_agent.len() as f64
    };
    Ok(LikelihoodScore { score, anchors, short })
}
