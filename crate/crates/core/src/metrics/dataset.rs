use std::collections::BTreeMap;

use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::simengine::{agent_rng, Rollout};
use crate::world::{AgentId, AgentState, SceneLog};

pub const HISTOGRAM_BINS: usize = 20;
pub const SPEED_RANGE: (f64, f64) = (0.0, 30.0);
pub const ACCEL_RANGE: (f64, f64) = (0.0, 10.0);
pub const JERK_RANGE: (f64, f64) = (0.0, 10.0);

/// Fixed-range histogram; values outside the range land in the edge bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0.0; bins],
        }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn add(&mut self, v: f64) {
        let b = ((v - self.lo) / self.bin_width()).floor();
        let b = b.clamp(0.0, (self.counts.len() - 1) as f64) as usize;
        self.counts[b] += 1.0;
    }

    fn cdf(&self) -> Vec<f64> {
        let total: f64 = self.counts.iter().sum();
        let mut acc = 0.0;
        self.counts
            .iter()
            .map(|c| {
                acc += if total > 0.0 { c / total } else { 0.0 };
                acc
            })
            .collect()
    }

    /// 1-D Wasserstein distance between the normalized histograms, in value units.
    pub fn wasserstein(&self, other: &Histogram) -> f64 {
        self.cdf()
            .iter()
            .zip(other.cdf())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.bin_width()
    }

    /// Wasserstein distance divided by `bin width × bin count`.
    pub fn normalized_distance(&self, other: &Histogram) -> f64 {
        self.wasserstein(other) / (self.bin_width() * self.counts.len() as f64)
    }
}

/// Driving-profile histograms of a set of trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub speed: Histogram,
    pub lon_acc: Histogram,
    pub lat_acc: Histogram,
    pub jerk: Histogram,
}

impl Default for Profiles {
    fn default() -> Self {
        Self {
            speed: Histogram::new(SPEED_RANGE.0, SPEED_RANGE.1, HISTOGRAM_BINS),
            lon_acc: Histogram::new(ACCEL_RANGE.0, ACCEL_RANGE.1, HISTOGRAM_BINS),
            lat_acc: Histogram::new(ACCEL_RANGE.0, ACCEL_RANGE.1, HISTOGRAM_BINS),
            jerk: Histogram::new(JERK_RANGE.0, JERK_RANGE.1, HISTOGRAM_BINS),
        }
    }
}

impl Profiles {
    /// Adds one agent's consecutive states: speed per state, acceleration
    /// magnitudes from first differences, jerk from second differences of speed.
    pub fn add_track(&mut self, track: &[AgentState], dt: f64) {
        for s in track {
            self.speed.add(s.speed);
        }
        let mut prev_acc: Option<f64> = None;
        for w in track.windows(2) {
            let acc = (w[1].speed - w[0].speed) / dt;
            let yaw = nncore::wrap_angle(w[1].heading - w[0].heading) / dt;
            self.lon_acc.add(acc.abs());
            self.lat_acc.add((yaw * w[1].speed).abs());
            if let Some(p) = prev_acc {
                self.jerk.add(((acc - p) / dt).abs());
            }
            prev_acc = Some(acc);
        }
    }

    pub fn add_frames(&mut self, frames: &[Vec<AgentState>], dt: f64) {
        for track in tracks(frames).values() {
            self.add_track(track, dt);
        }
    }
}

/// Consecutive-frame tracks by agent; a gap starts a new track segment that is dropped.
fn tracks(frames: &[Vec<AgentState>]) -> BTreeMap<AgentId, Vec<AgentState>> {
    let mut out: BTreeMap<AgentId, Vec<AgentState>> = BTreeMap::new();
    let mut last: BTreeMap<AgentId, usize> = BTreeMap::new();
    for (t, frame) in frames.iter().enumerate() {
        for s in frame {
            let contiguous = last.get(&s.agent_id).is_none_or(|&p| p + 1 == t);
            if contiguous {
                out.entry(s.agent_id).or_default().push(*s);
                last.insert(s.agent_id, t);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub speed: f64,
    pub lon_acc: f64,
    pub lat_acc: f64,
    pub jerk: f64,
    pub sade: f64,
    pub sfde: f64,
    /// Set when some rollout ran past the end of its log.
    pub truncated: bool,
}

/// Realism of rollouts against the logs they started from: normalized
/// histogram distances over all scenes, and mean/final position gaps over
/// the frames both cover.
pub fn dataset_metrics(pairs: &[(&Rollout, &SceneLog)]) -> Result<DatasetMetrics> {
    if pairs.is_empty() {
        return Err(SimError::InvalidArgument("no rollouts to compare".into()));
    }
    let mut sim = Profiles::default();
    let mut real = Profiles::default();
    let mut ade = Vec::new();
    let mut fde = Vec::new();
    let mut truncated = false;
    for (r, log) in pairs {
        let t0 = r.config.start_step;
        let end = (t0 + r.frames.len()).min(log.len());
        truncated |= t0 + r.frames.len() > log.len();
        let log_frames = &log.steps[t0.min(log.len())..end];
        sim.add_frames(&r.frames[..log_frames.len()], log.dt);
        real.add_frames(log_frames, log.dt);
        for id in r.frames.first().map(|f| f.iter().map(|s| s.agent_id).collect::<Vec<_>>()).unwrap_or_default() {
            let mut gaps = Vec::new();
            for (k, frame) in r.frames.iter().enumerate().take(log_frames.len()) {
                let (Some(a), Some(b)) = (find(frame, id), log.state(id, t0 + k)) else {
                    break;
                };
                gaps.push((a.x - b.x).hypot(a.y - b.y));
            }
            if let Some(&last) = gaps.last() {
                ade.push(gaps.iter().sum::<f64>() / gaps.len() as f64);
                fde.push(last);
            }
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(DatasetMetrics {
        speed: sim.speed.normalized_distance(&real.speed),
        lon_acc: sim.lon_acc.normalized_distance(&real.lon_acc),
        lat_acc: sim.lat_acc.normalized_distance(&real.lat_acc),
        jerk: sim.jerk.normalized_distance(&real.jerk),
        sade: mean(&ade),
        sfde: mean(&fde),
        truncated,
    })
}

fn find(frame: &[AgentState], id: AgentId) -> Option<&AgentState> {
    frame
        .binary_search_by_key(&id, |s| s.agent_id)
        .ok()
        .map(|i| &frame[i])
}

/// Ornstein-Uhlenbeck mean-reversion rate used by the perturbation harness, 1/s.
pub const OU_THETA: f64 = 0.5;

/// Adds an independent 2-D Ornstein-Uhlenbeck process to every agent's
/// positions, `n' = n - theta n dt + sigma sqrt(dt) xi`, starting from zero.
pub fn ou_perturb(log: &SceneLog, theta: f64, sigma: f64, seed: u64) -> Result<SceneLog> {
    if !(sigma >= 0.0 && sigma.is_finite() && theta >= 0.0 && theta.is_finite()) {
        return Err(SimError::InvalidArgument(format!("OU theta {theta} and sigma {sigma} must be non-negative")));
    }
    let mut out = log.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let dt = log.dt;
    let mut noise: BTreeMap<AgentId, (rand_chacha::ChaCha8Rng, f64, f64)> = BTreeMap::new();
    for frame in &mut out.steps {
        for s in frame.iter_mut() {
            let (rng, nx, ny) = noise
                .entry(s.agent_id)
                .or_insert_with(|| (agent_rng(seed, s.agent_id), 0.0, 0.0));
            s.x += *nx;
            s.y += *ny;
            let (ex, ey): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            *nx += -theta * *nx * dt + sigma * dt.sqrt() * ex;
            *ny += -theta * *ny * dt + sigma * dt.sqrt() * ey;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacent_bins_differ_by_one_width() {
        let mut a = Histogram::new(0.0, 30.0, 20);
        let mut b = Histogram::new(0.0, 30.0, 20);
        a.add(0.1);
        b.add(1.6);
        assert!((a.wasserstein(&b) - 1.5).abs() < 1e-12);
        assert!((a.normalized_distance(&b) - 1.5 / 30.0).abs() < 1e-12);
        assert_eq!(a.wasserstein(&a), 0.0);
    }
}
