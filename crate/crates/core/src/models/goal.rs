use nncore::layers::{Encoder, UNetDecoder};
use nncore::loss::{masked_residual_loss, spatial_cross_entropy, ResidualTarget};
use nncore::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::models::config::ModelConfig;
use crate::raster::{goal_cell, RasterConfig};
use crate::world::Pose;

pub const GOAL_KIND: &str = "goal";

/// Goal channels: likelihood logits, x/y residuals (meters from the cell
/// center) and heading (radians).
pub const GOAL_CHANNELS: usize = 4;

#[derive(Clone, Debug)]
pub struct GoalArch {
    encoder: Encoder,
    decoder: UNetDecoder,
    cells: usize,
}

impl GoalArch {
    /// `[N, C, S, S]` rasters to a `[N, 4, S, S]` goal map.
    pub fn forward(&self, store: &ParamStore, g: &mut Graph, input: Var) -> Result<Var> {
        let enc = self.encoder.forward(g, store, input)?;
        Ok(self.decoder.forward(g, store, input, &enc)?)
    }

    /// Channel 0 of a goal map, flattened to `[N, cells]`.
    pub fn logits(&self, g: &mut Graph, map: Var) -> Result<Var> {
        let n = g.shape(map)[0];
        let idx: Vec<usize> = (0..n)
            .flat_map(|i| (0..self.cells).map(move |c| i * GOAL_CHANNELS * self.cells + c))
            .collect();
        let flat = g.gather(map, &idx)?;
        Ok(g.reshape(flat, &[n, self.cells])?)
    }

    /// Cross-entropy over goal cells and the residual regression at the target cell.
    pub fn losses(&self, store: &ParamStore, g: &mut Graph, input: Var, targets: &[ResidualTarget]) -> Result<(Var, Var)> {
        let map = self.forward(store, g, input)?;
        let logits = self.logits(g, map)?;
        let cells: Vec<usize> = targets.iter().map(|t| t.cell).collect();
        let ce = spatial_cross_entropy(g, logits, &cells)?;
        let res = masked_residual_loss(g, map, targets)?;
        Ok((ce, res))
    }
}

/// Spatial goal network: strided encoder and a full-resolution U-Net decoder.
#[derive(Clone, Debug)]
pub struct GoalNet {
    pub config: ModelConfig,
    pub arch: GoalArch,
    pub store: ParamStore,
}

impl GoalNet {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.raster.channels();
        let encoder = Encoder::new(&mut store, "goal.enc", c, &config.backbone, &mut rng)?;
        let decoder = UNetDecoder::new(&mut store, "goal.dec", c, &config.backbone, 0, GOAL_CHANNELS, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            arch: GoalArch {
                encoder,
                decoder,
                cells: config.raster.cells(),
            },
            store,
        })
    }

    /// Goal maps for a batch of `[C, S, S]` rasters.
    pub fn predict(&self, rasters: &[Tensor]) -> Result<Vec<GoalMap>> {
        if rasters.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::stack(rasters)?);
        let map = self.arch.forward(&self.store, &mut g, x)?;
        let cells = self.config.raster.cells();
        let data = g.value(map).data();
        Ok(data
            .chunks(GOAL_CHANNELS * cells)
            .map(|m| GoalMap::new(&self.config.raster, m))
            .collect())
    }
}

/// Decoded goal-network output for one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalMap {
    pub raster: RasterConfig,
    pub logits: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub heading: Vec<f64>,
    log_probs: Vec<f64>,
}

/// A decoded goal in the ego frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub log_likelihood: f64,
    pub cell: usize,
}

impl GoalPose {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "temperature", rename_all = "snake_case")]
pub enum GoalSampling {
    /// Draws from `softmax(logits / temperature)`.
    Temperature(f64),
    /// The single most likely cell.
    Max,
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|l| (l - m) / temperature).collect();
    let lse = scaled.iter().map(|s| s.exp()).sum::<f64>().ln();
    scaled.iter().map(|s| s - lse).collect()
}

impl GoalMap {
    /// Builds a map from one item's `[4, S, S]` block.
    pub fn new(raster: &RasterConfig, block: &[f64]) -> Self {
        let cells = raster.cells();
        let logits = block[..cells].to_vec();
        let log_probs = log_softmax(&logits, 1.0);
        Self {
            raster: raster.clone(),
            dx: block[cells..2 * cells].to_vec(),
            dy: block[2 * cells..3 * cells].to_vec(),
            heading: block[3 * cells..4 * cells].to_vec(),
            logits,
            log_probs,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn decode(&self, cell: usize) -> GoalPose {
        let (cx, cy) = self.raster.cell_center(cell);
        GoalPose {
            x: cx + self.dx[cell],
            y: cy + self.dy[cell],
            heading: self.heading[cell],
            log_likelihood: self.log_probs[cell],
            cell,
        }
    }

    /// Most likely cell; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.logits.iter().enumerate() {
            if l > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

/// Draws `k` goals. `Max` returns the argmax goal once.
pub fn sample_goals(map: &GoalMap, k: usize, mode: GoalSampling, rng: &mut impl Rng) -> Result<Vec<GoalPose>> {
    if k == 0 {
        return Err(SimError::InvalidArgument("need at least one goal sample".into()));
    }
    let temperature = match mode {
        GoalSampling::Max => return Ok(vec![map.decode(map.argmax())]),
        GoalSampling::Temperature(t) if t > 0.0 && t.is_finite() => t,
        GoalSampling::Temperature(t) => {
            return Err(SimError::InvalidArgument(format!("temperature {t} must be positive")))
        }
    };
    let lp = log_softmax(&map.logits, temperature);
    let mut cdf = Vec::with_capacity(lp.len());
    let mut acc = 0.0;
    for l in &lp {
        acc += l.exp();
        cdf.push(acc);
    }
    let total = acc;
    Ok((0..k)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * total;
            let cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            // Never land on a zero-probability cell through rounding at the top.
            let cell = if lp[cell] == f64::NEG_INFINITY { map.argmax() } else { cell };
            map.decode(cell)
        })
        .collect())
}

/// Supervision for one goal-net sample, if the goal lies inside the window.
pub fn goal_target(raster: &RasterConfig, goal: &Pose) -> Option<ResidualTarget> {
    let (cell, dx, dy) = goal_cell(raster, goal)?;
    Some(ResidualTarget {
        cell,
        dx,
        dy,
        heading: goal.heading,
    })
}
