//! End-to-end acceptance run on the desk configuration. Prints one PASS/FAIL
//! line per criterion and fails if any criterion fails.
//!
//! Stage outputs are cached under the cargo target directory, so only the
//! first run pays for generation, training and simulation.

#[path = "../../core/tests/support/mod.rs"]
mod core_support;
#[path = "../../nncore/tests/support/mod.rs"]
mod nn_support;

use std::path::Path;
use std::time::{Duration, Instant};

use bits_cli::config::{RunConfig, Split};
use bits_cli::pipeline::{cmd_eval, cmd_gen, cmd_sim, cmd_train, expert_likelihood, load_rollouts, load_scenes, Evaluation};
use bits_core::models::{train_goal, train_occupancy, train_traj, GoalNet, OccupancyNet, TrainConfig, TrainReport, TrajNet};
use bits_core::planner::{collision_cost, sigmoid, CostWeights};
use bits_core::simengine::PolicyKind;
use bits_core::world::{AgentState, Dataset};
use nncore::loss::spatial_cross_entropy;
use nncore::{Graph, Tensor};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn desk() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let mut cfg = RunConfig::load(&path).expect("desk config");
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    cfg.paths.logs = root.join("logs");
    cfg.paths.checkpoints = root.join("checkpoints");
    cfg.paths.outputs = root.join("outputs");
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg.eval.likelihood = false;
    cfg
}

fn evaluate(cfg: &RunConfig, policy: PolicyKind) -> Evaluation {
    let mut c = cfg.clone();
    c.policy = policy;
    cmd_sim(&c).expect("simulation");
    cmd_eval(&c).expect("evaluation").1
}

fn oracles() -> Outcome {
    let t = Instant::now();
    let dm = core_support::oracles::distance_maps_agree(11);
    let emd = core_support::oracles::emd_max_error(13);
    let sat = core_support::oracles::overlap_tests_agree(16);
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "oracle equivalences",
        pass: dm.is_ok() && emd <= 1e-6 && sat.is_ok() && secs < 120.0,
        detail: format!("distance map {dm:?} masks, EMD max error {emd:.2e}, SAT {sat:?} overlaps, {secs:.1} s"),
    }
}

fn gradients() -> Outcome {
    let mut worst: (f64, &str) = (0.0, "");
    let mut pass = true;
    let decoder = ("decoder", core_support::decoder::decoder_gradcheck as fn() -> _);
    for (name, case) in nn_support::layer_cases::CASES.into_iter().chain([decoder]) {
        let r = case();
        pass &= r.checked >= 100 && r.max_rel_error < 1e-3;
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, name);
        }
    }
    Outcome {
        id: 2,
        name: "gradient checks",
        pass,
        detail: format!("{} cases, worst relative error {:.2e} ({})", nn_support::layer_cases::CASES.len() + 1, worst.0, worst.1),
    }
}

fn closed_forms(cfg: &RunConfig) -> Outcome {
    let w = CostWeights::default();
    // Two boxes side by side and just touching: every step costs sigmoid(-beta).
    let car = |id, y| AgentState::new(id, 20.0, y, 0.0, 5.0, 4.0, 2.0).unwrap();
    let contact = collision_cost(&[car(0, 0.0)], &[vec![car(1, 2.0)]], &w).unwrap();
    let n = cfg.model.raster.cells();
    let mut g = Graph::new();
    let logits = g.input(Tensor::zeros(&[2, n]));
    let ce = spatial_cross_entropy(&mut g, logits, &[0, n - 1]).unwrap();
    let ce = g.value(ce).item();
    let pass = (contact - 0.017986).abs() <= 1e-6
        && (sigmoid(-4.0) - 0.017986).abs() <= 1e-6
        && (ce - (n as f64).ln()).abs() <= 1e-9;
    Outcome {
        id: 3,
        name: "closed-form constants",
        pass,
        detail: format!("contact cost {contact:.7}, uniform cross-entropy {ce:.12} vs ln {n} = {:.12}", (n as f64).ln()),
    }
}

fn replay(cfg: &RunConfig) -> Outcome {
    let mut c = cfg.clone();
    c.policy = PolicyKind::LogReplay;
    let ev = evaluate(cfg, PolicyKind::LogReplay);
    let scenes = load_scenes(&c, Split::Test, c.test_scenes()).unwrap();
    let rollouts = load_rollouts(&c).unwrap();
    let start = c.sim.start_step;
    let end = start + c.sim.steps + 1;
    let exact = rollouts.iter().zip(&scenes).all(|(rs, sc)| {
        rs.iter()
            .all(|r| r.history == sc.log.steps[..start] && r.frames == sc.log.steps[start..end.min(sc.log.len())])
    });
    let d = ev.report.dataset.expect("dataset metrics");
    let zeros = [d.speed, d.lon_acc, d.lat_acc, d.jerk, d.sade, d.sfde].iter().all(|&v| v == 0.0);
    Outcome {
        id: 4,
        name: "replay identity",
        pass: exact && zeros,
        detail: format!(
            "bit-exact {exact}; speed {} lon {} lat {} jerk {} sADE {} sFDE {}",
            d.speed, d.lon_acc, d.lat_acc, d.jerk, d.sade, d.sfde
        ),
    }
}

fn diversity(bc: &Evaluation, max: &Evaluation, sample: &Evaluation) -> Outcome {
    let zero = |e: &Evaluation| e.scenes.iter().all(|s| s.diversity == 0.0);
    let positive = sample.scenes.iter().filter(|s| s.diversity > 0.0).count();
    Outcome {
        id: 5,
        name: "determinism and diversity",
        pass: zero(bc) && zero(max) && positive >= 18 && sample.scenes.len() == 20 && bc.report.trials == 5,
        detail: format!(
            "bc_baseline {:.3}, bits_max {:.3}, bits_sample > 0 on {positive}/{} scenes",
            bc.report.diversity,
            max.report.diversity,
            sample.scenes.len()
        ),
    }
}

fn ordering(bits: &Evaluation, max: &Evaluation, sample: &Evaluation, elapsed: Duration) -> Outcome {
    let cd = |e: &Evaluation| e.report.coverage_drivable + e.report.diversity;
    let (fr_b, fr_s) = (bits.report.failures.fr, sample.report.failures.fr);
    Outcome {
        id: 6,
        name: "planner ordering",
        pass: fr_b <= fr_s && cd(bits) >= cd(max) && elapsed < Duration::from_secs(4 * 3600),
        detail: format!(
            "FR bits {fr_b:.1} <= bits_sample {fr_s:.1}; coverage+diversity bits {:.1} >= bits_max {:.1}; pipeline {:.0} s",
            cd(bits),
            cd(max),
            elapsed.as_secs_f64()
        ),
    }
}

fn likelihood(cfg: &RunConfig) -> Outcome {
    let scores: Vec<f64> = cfg.sweep.ou_sigmas.iter().map(|&s| expert_likelihood(cfg, s).unwrap()).collect();
    let mut inversions = 0;
    let mut small = true;
    for w in scores.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            small &= (w[1] - w[0]) / w[0] <= 0.05;
        }
    }
    let pass = cfg.sweep.ou_sigmas == [0.0, 0.5, 1.0, 2.0] && (inversions == 0 || (inversions == 1 && small));
    Outcome {
        id: 7,
        name: "likelihood under noise",
        pass,
        detail: format!("sigma {:?} -> {scores:.4?}", cfg.sweep.ou_sigmas),
    }
}

fn ablation(cfg: &RunConfig, bits: &Evaluation) -> Outcome {
    let mut off = cfg.clone();
    off.sim.weights.collision = 0.0;
    let zero = evaluate(&off, PolicyKind::Bits);
    let (w10, w0) = (bits.report.failures.coll_fr, zero.report.failures.coll_fr);
    Outcome {
        id: 8,
        name: "collision weight ablation",
        pass: cfg.sim.weights.collision == 10.0 && cfg.sim.weights.offroad == 1.0 && w10 <= w0,
        detail: format!("collision FR at weight 10: {w10:.1}, at weight 0: {w0:.1}"),
    }
}

fn memorization(cfg: &RunConfig) -> Outcome {
    let scenes = load_scenes(cfg, Split::Train, cfg.data.train_scenes).unwrap();
    let data = Dataset::build(scenes, cfg.data.sample_stride, cfg.model.horizon, &cfg.model.raster).unwrap();
    let idx: Vec<usize> = (0..50).collect();
    let schedule = |lr| TrainConfig {
        iterations: 2000,
        batch_size: 50,
        lr,
        seed: 1,
        val_every: 0,
        val_samples: 0,
        stop_ratio: Some(0.1),
    };
    let run = || -> Vec<(&'static str, TrainReport)> {
        let mut goal = GoalNet::new(&cfg.model, 1).unwrap();
        let mut traj = TrajNet::new(&cfg.model, 2).unwrap();
        let mut occ = OccupancyNet::new(&cfg.model, 3).unwrap();
        vec![
            ("goal", train_goal(&mut goal, &data, &schedule(1e-2), &idx, &[]).unwrap()),
            ("traj", train_traj(&mut traj, &data, &schedule(1e-2), &idx, &[]).unwrap()),
            ("occupancy", train_occupancy(&mut occ, &data, &schedule(3e-3), &idx, &[]).unwrap()),
        ]
    };
    let (a, b) = (run(), run());
    let deterministic = a.iter().zip(&b).all(|(x, y)| x.1.last == y.1.last && x.1.iterations == y.1.iterations);
    let ratios: Vec<(String, f64)> = a.iter().flat_map(|(_, r)| r.ratios()).collect();
    let needed = ["goal", "policy", "predictor", "occupancy"];
    let pass = data.len() >= 50
        && deterministic
        && needed.iter().all(|k| ratios.iter().any(|(n, v)| n == k && *v < 0.1))
        && a.iter().all(|(_, r)| r.iterations <= 2000);
    let iters: Vec<String> = a.iter().map(|(n, r)| format!("{n} {}", r.iterations)).collect();
    let shown: Vec<String> = ratios.iter().map(|(n, v)| format!("{n} {v:.4}")).collect();
    Outcome {
        id: 9,
        name: "memorization",
        pass,
        detail: format!("final/initial {}; iterations {}; deterministic {deterministic}", shown.join(", "), iters.join(", ")),
    }
}

#[test]
fn acceptance() {
    let cfg = desk();
    let mut out = vec![oracles(), gradients(), closed_forms(&cfg)];

    let t = Instant::now();
    cmd_gen(&cfg).expect("generation");
    cmd_train(&cfg).expect("training");
    let bits = evaluate(&cfg, PolicyKind::Bits);
    let max = evaluate(&cfg, PolicyKind::BitsMax);
    let sample = evaluate(&cfg, PolicyKind::BitsSample);
    let elapsed = t.elapsed();
    let bc = evaluate(&cfg, PolicyKind::BcBaseline);

    out.push(replay(&cfg));
    out.push(diversity(&bc, &max, &sample));
    out.push(ordering(&bits, &max, &sample, elapsed));
    out.push(likelihood(&cfg));
    out.push(ablation(&cfg, &bits));
    out.push(memorization(&cfg));

    for o in &out {
        println!("{} [{}] {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    let failed: Vec<usize> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
