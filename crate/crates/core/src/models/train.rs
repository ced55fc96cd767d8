use std::collections::BTreeMap;

use nncore::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::models::config::TrainConfig;
use crate::models::goal::{goal_target, GoalNet};
use crate::models::occupancy::OccupancyNet;
use crate::models::traj::{NeighborQuery, TrajBatch, TrajNet};
use crate::world::{Dataset, Pose};

/// Per-component loss history of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub stopped_early: bool,
    /// First training-batch value of each component.
    pub initial: BTreeMap<String, f64>,
    /// Last training-batch value of each component.
    pub last: BTreeMap<String, f64>,
    pub train_curve: Vec<(usize, BTreeMap<String, f64>)>,
    pub val_curve: Vec<(usize, BTreeMap<String, f64>)>,
    /// Iteration of the restored best-validation parameters, if validated.
    pub best_iteration: Option<usize>,
}

impl TrainReport {
    /// `last / initial` per component.
    pub fn ratios(&self) -> BTreeMap<String, f64> {
        self.last
            .iter()
            .filter_map(|(k, v)| self.initial.get(k).map(|i| (k.clone(), v / i)))
            .collect()
    }
}

/// Graph, total loss and named scalar components of one batch.
pub struct BatchLoss {
    pub graph: Graph,
    pub total: Var,
    pub components: Vec<(&'static str, f64)>,
}

/// Lazily built rasters, kept for up to `limit` samples.
struct RasterCache<'a> {
    data: &'a Dataset,
    slots: Vec<Option<Tensor>>,
    limit: usize,
    held: usize,
}

const CACHE_LIMIT: usize = 1024;

impl<'a> RasterCache<'a> {
    fn new(data: &'a Dataset) -> Self {
        Self {
            data,
            slots: vec![None; data.len()],
            limit: CACHE_LIMIT,
            held: 0,
        }
    }

    fn batch(&mut self, indices: &[usize]) -> Result<Tensor> {
        let mut items = Vec::with_capacity(indices.len());
        for &i in indices {
            let t = match &self.slots[i] {
                Some(t) => t.clone(),
                None => {
                    let t = self.data.context(i)?.raster;
                    if self.held < self.limit {
                        self.slots[i] = Some(t.clone());
                        self.held += 1;
                    }
                    t
                }
            };
            items.push(t);
        }
        Ok(Tensor::stack(&items)?)
    }
}

fn components_map(c: &[(&'static str, f64)]) -> BTreeMap<String, f64> {
    c.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Mini-batch Adam over `train` sample indices with periodic validation on
/// `val`. The best validation parameters are restored at the end; with
/// `stop_ratio` the run ends once every component is below that fraction of
/// its first value.
pub fn train_loop<F>(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    train: &[usize],
    val: &[usize],
    mut batch_loss: F,
) -> Result<TrainReport>
where
    F: FnMut(&ParamStore, &[usize]) -> Result<BatchLoss>,
{
    if train.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(SimError::Config("batch size and learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let val: Vec<usize> = val.iter().copied().take(cfg.val_samples).collect();
    let mut order: Vec<usize> = train.to_vec();
    let mut cursor = order.len();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let log_every = (cfg.iterations / 200).max(1);

    for it in 0..cfg.iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch: Vec<usize> = order[cursor..end].to_vec();
        cursor = end;

        let BatchLoss { graph, total, components } = batch_loss(store, &batch)?;
        let value = graph.value(total).item();
        if !value.is_finite() {
            return Err(SimError::Diverged(format!("loss {value} at iteration {it}")));
        }
        let grads = graph.backward(total, store)?;
        drop(graph);
        adam.step(store, &grads);

        for (k, v) in &components {
            report.initial.entry(k.to_string()).or_insert(*v);
            report.last.insert(k.to_string(), *v);
        }
        if it % log_every == 0 {
            report.train_curve.push((it, components_map(&components)));
        }
        report.iterations = it + 1;

        if !val.is_empty() && cfg.val_every > 0 && (it + 1) % cfg.val_every == 0 {
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            let mut total_sum = 0.0;
            let mut chunks = 0.0;
            for chunk in val.chunks(cfg.batch_size) {
                let b = batch_loss(store, chunk)?;
                total_sum += b.graph.value(b.total).item();
                for (k, v) in b.components {
                    *sums.entry(k.to_string()).or_default() += v;
                }
                chunks += 1.0;
            }
            sums.values_mut().for_each(|v| *v /= chunks);
            let mean = total_sum / chunks;
            log::info!("iteration {}: validation loss {mean:.5}", it + 1);
            report.val_curve.push((it + 1, sums));
            if best.as_ref().is_none_or(|(b, _)| mean < *b) {
                best = Some((mean, store.clone()));
                report.best_iteration = Some(it + 1);
            }
        }

        if let Some(ratio) = cfg.stop_ratio {
            let done = components.iter().all(|(k, v)| {
                let init = report.initial[*k];
                *v < ratio * init
            });
            if done {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let (Some((_, params)), false) = (best, report.stopped_early) {
        store.load_from(&params)?;
    }
    if adam.skipped() > 0 {
        log::warn!("{} optimizer steps skipped on non-finite gradients", adam.skipped());
    }
    Ok(report)
}

/// Trains the goal network on every sample of `train`/`val`.
pub fn train_goal(net: &mut GoalNet, data: &Dataset, cfg: &TrainConfig, train: &[usize], val: &[usize]) -> Result<TrainReport> {
    let targets = data
        .samples
        .iter()
        .map(|s| goal_target(&data.raster, &s.goal))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| SimError::InvalidArgument("goal outside the raster window".into()))?;
    let mut cache = RasterCache::new(data);
    let arch = net.arch.clone();
    train_loop(&mut net.store, cfg, train, val, |store, idx| {
        let mut g = Graph::new();
        let x = g.input(cache.batch(idx)?);
        let t: Vec<_> = idx.iter().map(|&i| targets[i]).collect();
        let (ce, res) = arch.losses(store, &mut g, x, &t)?;
        let total = g.add(ce, res)?;
        let components = vec![("goal", g.value(total).item())];
        Ok(BatchLoss { graph: g, total, components })
    })
}

/// Jointly trains the policy, neighbor predictor and baseline heads.
pub fn train_traj(net: &mut TrajNet, data: &Dataset, cfg: &TrainConfig, train: &[usize], val: &[usize]) -> Result<TrainReport> {
    if data.horizon != net.config.horizon {
        return Err(SimError::Config(format!(
            "dataset horizon {} does not match model horizon {}",
            data.horizon, net.config.horizon
        )));
    }
    let mut cache = RasterCache::new(data);
    let arch = net.arch.clone();
    train_loop(&mut net.store, cfg, train, val, |store, idx| {
        let mut g = Graph::new();
        let x = g.input(cache.batch(idx)?);
        let samples: Vec<_> = idx.iter().map(|&i| &data.samples[i]).collect();
        let mut neighbors = Vec::new();
        let mut neighbor_futures = Vec::new();
        for (b, s) in samples.iter().enumerate() {
            for n in &s.neighbors {
                neighbors.push(NeighborQuery {
                    batch: b,
                    pose: n.start,
                    speed: n.speed,
                });
                neighbor_futures.push(n.future.iter().map(|p| n.start.relative(p)).collect::<Vec<Pose>>());
            }
        }
        let batch = TrajBatch {
            speeds: samples.iter().map(|s| s.start_speed).collect(),
            goals: samples.iter().map(|s| s.goal).collect(),
            futures: samples.iter().map(|s| s.future.as_slice()).collect(),
            neighbors,
            neighbor_futures,
        };
        let l = arch.losses(store, &mut g, x, &batch)?;
        let mut components = vec![("policy", g.value(l.policy).item())];
        let mut total = g.add(l.policy, l.baseline)?;
        if let Some(p) = l.predictor {
            components.push(("predictor", g.value(p).item()));
            total = g.add(total, p)?;
        }
        components.push(("baseline", g.value(l.baseline).item()));
        Ok(BatchLoss { graph: g, total, components })
    })
}

/// Trains the occupancy model on the first `occupancy_steps` future poses of each sample.
pub fn train_occupancy(
    net: &mut OccupancyNet,
    data: &Dataset,
    cfg: &TrainConfig,
    train: &[usize],
    val: &[usize],
) -> Result<TrainReport> {
    let steps = net.config.occupancy_steps;
    if data.horizon < steps {
        return Err(SimError::Config(format!(
            "dataset horizon {} shorter than {steps} occupancy steps",
            data.horizon
        )));
    }
    let targets = data
        .samples
        .iter()
        .map(|s| {
            s.future[..steps]
                .iter()
                .map(|p| net.config.occupancy_cell_of(p.x, p.y))
                .collect::<Option<Vec<_>>>()
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| SimError::InvalidArgument("future outside the occupancy grid".into()))?;
    let mut cache = RasterCache::new(data);
    let arch = net.arch.clone();
    train_loop(&mut net.store, cfg, train, val, |store, idx| {
        let mut g = Graph::new();
        let x = g.input(cache.batch(idx)?);
        let t: Vec<Vec<usize>> = idx.iter().map(|&i| targets[i].clone()).collect();
        let total = arch.loss(store, &mut g, x, &t)?;
        let components = vec![("occupancy", g.value(total).item())];
        Ok(BatchLoss { graph: g, total, components })
    })
}
