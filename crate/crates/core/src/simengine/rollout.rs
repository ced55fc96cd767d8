use std::path::Path;
use std::str::FromStr;

use nncore::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_controls, step, Control, Limits};
use crate::error::{Result, SimError};
use crate::models::{sample_goals, GoalNet, GoalSampling, NeighborQuery, TrajNet};
use crate::planner::{select_action, CandidatePlan, CostMap, CostWeights, PlanDecision};
use crate::raster::{rasterize_frames, visible_neighbors, RasterConfig, SemanticGrid};
use crate::simengine::events::{compute_events, FailureEvent};
use crate::world::{gen_map, AgentId, AgentState, MapSpec, SceneLog};

pub const ROLLOUT_FORMAT: &str = "bits-rollout";
pub const ROLLOUT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Sampled goals, neighbor prediction and cost-based selection.
    Bits,
    /// The single most likely goal, no planning.
    BitsMax,
    /// One sampled goal, no planning.
    BitsSample,
    /// Goal-free behavior cloning head.
    BcBaseline,
    /// Plays back the recorded log.
    LogReplay,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Bits,
        PolicyKind::BitsMax,
        PolicyKind::BitsSample,
        PolicyKind::BcBaseline,
        PolicyKind::LogReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Bits => "bits",
            PolicyKind::BitsMax => "bits_max",
            PolicyKind::BitsSample => "bits_sample",
            PolicyKind::BcBaseline => "bc_baseline",
            PolicyKind::LogReplay => "log_replay",
        }
    }

    pub fn needs_goal_net(self) -> bool {
        matches!(self, PolicyKind::Bits | PolicyKind::BitsMax | PolicyKind::BitsSample)
    }

    pub fn needs_traj_net(self) -> bool {
        self != PolicyKind::LogReplay
    }
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|p| p.name()).collect();
                SimError::Config(format!("unknown policy {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Simulated steps after the start frame.
    pub steps: usize,
    /// Log frame the rollout starts from; earlier frames seed the history.
    pub start_step: usize,
    /// Controls executed between planning events.
    pub replan_every: usize,
    /// Candidate plans per planning event.
    pub candidates: usize,
    /// Goal sampling temperature for the sampling policies.
    pub temperature: f64,
    pub weights: CostWeights,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            start_step: 10,
            replan_every: 5,
            candidates: 50,
            temperature: 1.0,
            weights: CostWeights::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.replan_every == 0 || self.candidates == 0 {
            return Err(SimError::Config("replan stride and candidate count must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SimError::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Learned models available to a rollout.
#[derive(Clone, Copy, Default)]
pub struct Models<'a> {
    pub goal: Option<&'a GoalNet>,
    pub traj: Option<&'a TrajNet>,
}

/// One agent's planning outcome, recorded for bits rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// Rollout frame index of the planning event.
    pub step: usize,
    pub agent_id: AgentId,
    pub decision: PlanDecision,
}

/// A closed-loop episode: frames `0..=steps` with frame 0 taken from the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub format: String,
    pub version: u32,
    pub map: MapSpec,
    pub policy: PolicyKind,
    pub seed: u64,
    pub config: SimConfig,
    /// Log frames preceding the start, oldest first.
    pub history: Vec<Vec<AgentState>>,
    pub frames: Vec<Vec<AgentState>>,
    pub decisions: Vec<DecisionRecord>,
    pub events: Vec<FailureEvent>,
}

impl Rollout {
    pub fn agent_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<AgentId> = self.frames.iter().flatten().map(|s| s.agent_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// The frames as a scene log with the source log's timing.
    pub fn to_log(&self, dt: f64) -> SceneLog {
        let map_id = self.map.map_id();
        SceneLog {
            map_id,
            map: self.map.clone(),
            dt,
            steps: self.frames.clone(),
            meta: Default::default(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Rollout = serde_json::from_str(text)?;
        if r.format != ROLLOUT_FORMAT || r.version != ROLLOUT_VERSION {
            return Err(SimError::Serde(format!("unsupported rollout {} v{}", r.format, r.version)));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Independent stream for one agent so that agent count changes do not shift other agents' draws.
pub fn agent_rng(seed: u64, agent: AgentId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

struct Sim<'a> {
    grid: &'a SemanticGrid,
    costs: Option<CostMap>,
    history: Vec<Vec<AgentState>>,
    frames: Vec<Vec<AgentState>>,
}

impl Sim<'_> {
    /// `history + 1` frames ending at the current one, empty before the log starts.
    fn window(&self, history: usize) -> Vec<&[AgentState]> {
        let all: Vec<&[AgentState]> = self
            .history
            .iter()
            .chain(self.frames.iter())
            .map(|f| f.as_slice())
            .collect();
        let end = all.len();
        (0..=history)
            .map(|k| {
                (end + k)
                    .checked_sub(history + 1)
                    .map_or(&[][..], |i| all[i])
            })
            .collect()
    }

    fn rasters(&self, agents: &[AgentState], cfg: &RasterConfig) -> Result<Vec<Tensor>> {
        let frames = self.window(cfg.history);
        agents
            .iter()
            .map(|a| rasterize_frames(self.grid, a, &frames, cfg))
            .collect()
    }
}

/// Runs one closed-loop episode from `log` frame `config.start_step`.
/// Every agent present at the start frame is driven by a replica of the
/// same policy; all agents decide on the same frame and then move together.
pub fn run_rollout(log: &SceneLog, policy: PolicyKind, models: Models, config: &SimConfig, seed: u64) -> Result<Rollout> {
    config.validate()?;
    let t0 = config.start_step;
    let start = log
        .steps
        .get(t0)
        .ok_or_else(|| SimError::InvalidArgument(format!("log of {} steps has no frame {t0}", log.len())))?;
    if start.is_empty() {
        return Err(SimError::InvalidArgument(format!("frame {t0} has no agents")));
    }
    let (_, grid) = gen_map(&log.map)?;
    let goal = match (policy.needs_goal_net(), models.goal) {
        (true, None) => return Err(SimError::MissingCheckpoint("goal network".into())),
        (_, g) => g,
    };
    let traj = match (policy.needs_traj_net(), models.traj) {
        (true, None) => return Err(SimError::MissingCheckpoint("trajectory network".into())),
        (_, t) => t,
    };
    let mut sim = Sim {
        grid: &grid,
        costs: None,
        history: log.steps[..t0].to_vec(),
        frames: vec![start.clone()],
    };
    let mut decisions = Vec::new();

    if policy == PolicyKind::LogReplay {
        let end = (t0 + config.steps + 1).min(log.len());
        sim.frames = log.steps[t0..end].to_vec();
    } else {
        let traj = traj.expect("checked above");
        if policy == PolicyKind::Bits {
            sim.costs = Some(CostMap::from_grid(&grid)?);
        }
        let limits = traj.config.limits.clone();
        let mut rngs: Vec<ChaCha8Rng> = start.iter().map(|s| agent_rng(seed, s.agent_id)).collect();
        let mut plans: Vec<Vec<Control>> = vec![Vec::new(); start.len()];
        for k in 0..config.steps {
            let current = sim.frames.last().expect("non-empty").clone();
            if k % config.replan_every == 0 {
                let (p, d) = plan(&sim, &current, policy, goal, traj, config, &mut rngs, k)?;
                plans = p;
                decisions.extend(d);
            }
            let i = k % config.replan_every;
            let next = current
                .iter()
                .zip(&plans)
                .map(|(s, u)| advance(s, u.get(i).copied(), &limits))
                .collect::<Result<Vec<_>>>()?;
            sim.frames.push(next);
        }
    }
    let events = compute_events(&sim.frames, &grid);
    Ok(Rollout {
        format: ROLLOUT_FORMAT.into(),
        version: ROLLOUT_VERSION,
        map: log.map.clone(),
        policy,
        seed,
        config: config.clone(),
        history: sim.history,
        frames: sim.frames,
        decisions,
        events,
    })
}

/// Applies a planned control; past the end of a plan the agent holds its speed and heading.
fn advance(s: &AgentState, u: Option<Control>, limits: &Limits) -> Result<AgentState> {
    step(s, u.unwrap_or(Control::new(s.speed, 0.0)), limits)
}

#[allow(clippy::too_many_arguments)]
fn plan(
    sim: &Sim,
    agents: &[AgentState],
    policy: PolicyKind,
    goal: Option<&GoalNet>,
    traj: &TrajNet,
    config: &SimConfig,
    rngs: &mut [ChaCha8Rng],
    k: usize,
) -> Result<(Vec<Vec<Control>>, Vec<DecisionRecord>)> {
    let speeds: Vec<f64> = agents.iter().map(|s| s.speed).collect();
    let traj_rasters = sim.rasters(agents, &traj.config.raster)?;
    if policy == PolicyKind::BcBaseline {
        let mut enc = traj.encode(&traj_rasters)?;
        return Ok((enc.baseline(&speeds)?, Vec::new()));
    }
    let goal = goal.expect("checked by caller");
    let goal_rasters = if goal.config.raster == traj.config.raster {
        traj_rasters.clone()
    } else {
        sim.rasters(agents, &goal.config.raster)?
    };
    let maps = goal.predict(&goal_rasters)?;
    let (count, mode) = match policy {
        PolicyKind::Bits => (config.candidates, GoalSampling::Temperature(config.temperature)),
        PolicyKind::BitsSample => (1, GoalSampling::Temperature(config.temperature)),
        _ => (1, GoalSampling::Max),
    };
    let mut batch = Vec::new();
    let mut goals = Vec::new();
    let mut goal_speeds = Vec::new();
    let mut sampled = Vec::with_capacity(agents.len());
    for (i, (map, rng)) in maps.iter().zip(rngs.iter_mut()).enumerate() {
        let g = sample_goals(map, count, mode, rng)?;
        for p in &g {
            batch.push(i);
            goals.push(p.pose());
            goal_speeds.push(speeds[i]);
        }
        sampled.push(g);
    }
    let mut enc = traj.encode(&traj_rasters)?;
    let controls = enc.policy(&batch, &goals, &goal_speeds)?;
    if policy != PolicyKind::Bits {
        return Ok((controls, Vec::new()));
    }

    // Neighbor forecasts, one query per (agent, visible neighbor).
    let mut queries = Vec::new();
    let mut world = Vec::new();
    let mut owner = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        let pose = a.pose();
        for n in visible_neighbors(a, agents, &traj.config.raster) {
            queries.push(NeighborQuery {
                batch: i,
                pose: pose.relative(&n.pose()),
                speed: n.speed,
            });
            world.push(n);
            owner.push(i);
        }
    }
    let forecasts = enc.predict(&queries, &world)?;
    let costs = sim.costs.as_ref().expect("cost map built for bits");
    let limits = &traj.config.limits;
    let mut out = Vec::with_capacity(agents.len());
    let mut records = Vec::with_capacity(agents.len());
    let mut row = 0;
    for (i, a) in agents.iter().enumerate() {
        let candidates = sampled[i]
            .iter()
            .map(|g| {
                let u = controls[row].clone();
                row += 1;
                let trajectory = rollout_controls(a, &u, limits)?;
                Ok(CandidatePlan {
                    goal: *g,
                    controls: u,
                    trajectory,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let neighbors: Vec<Vec<AgentState>> = owner
            .iter()
            .zip(&forecasts)
            .filter(|(o, _)| **o == i)
            .map(|(_, f)| f.clone())
            .collect();
        let decision = select_action(&candidates, &neighbors, costs, &config.weights)?;
        out.push(candidates[decision.chosen].controls.clone());
        records.push(DecisionRecord {
            step: k,
            agent_id: a.agent_id,
            decision,
        });
    }
    Ok((out, records))
}
