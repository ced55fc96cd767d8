use bits_core::metrics::{
    coverage, dataset_metrics, kde_density, ou_perturb, rollout_failures, DensityGrid, Histogram,
};
use bits_core::simengine::{compute_events, PolicyKind, Rollout, SimConfig, ROLLOUT_FORMAT, ROLLOUT_VERSION};
use bits_core::world::{gen_map, AgentState, EpisodeMeta, MapSpec, SceneLog};

fn grid(n: usize) -> DensityGrid {
    DensityGrid {
        origin: (0.0, 0.0),
        cell: 0.5,
        width: n,
        height: n,
    }
}

fn rollout(map: MapSpec, frames: Vec<Vec<AgentState>>) -> Rollout {
    let (_, sg) = gen_map(&map).unwrap();
    let events = compute_events(&frames, &sg);
    Rollout {
        format: ROLLOUT_FORMAT.into(),
        version: ROLLOUT_VERSION,
        map,
        policy: PolicyKind::LogReplay,
        seed: 0,
        config: SimConfig {
            start_step: 0,
            steps: frames.len() - 1,
            ..SimConfig::default()
        },
        history: Vec::new(),
        frames,
        decisions: Vec::new(),
        events,
    }
}

fn car(id: u32, x: f64, y: f64, speed: f64) -> AgentState {
    AgentState::new(id, x, y, 0.0, speed, 4.0, 2.0).unwrap()
}

#[test]
fn two_separated_modes_split_the_mass_evenly() {
    let g = grid(80);
    // Cell centers at (20.25, 10.25) and (20.25, 30.25), 20 m apart with bandwidth 1.5.
    let pts = [(20.25, 10.25), (20.25, 30.25)];
    let p = kde_density(&pts, &g, 1.5).unwrap();
    assert!((p.total() - 1.0).abs() < 1e-12);
    for &(x, y) in &pts {
        let near: f64 = (0..g.len())
            .filter(|&i| {
                let (cx, cy) = g.center(i);
                (cx - x).hypot(cy - y) <= 3.0 * 1.5 + 1e-9
            })
            .map(|i| p.mass[i])
            .sum();
        assert!((near - 0.5).abs() < 1e-6, "{near}");
    }
}

#[test]
fn coverage_is_bounded_by_the_kernel_disc_and_monotone() {
    let g = grid(80);
    let (_, map) = gen_map(&MapSpec::straight(200.0, 2, 0)).unwrap();
    let one = kde_density(&[(20.0, 20.0)], &g, 1.0).unwrap();
    let c1 = coverage(std::slice::from_ref(&one), 1e-4, &map).total();
    // Cells within three bandwidths of the point: at most pi * (3 / 0.5)^2 plus a rim.
    assert!(c1 > 0 && (c1 as f64) <= std::f64::consts::PI * 7.0 * 7.0, "{c1}");
    let two = kde_density(&[(20.0, 20.0), (30.0, 20.0)], &g, 1.0).unwrap();
    let c2 = coverage(&[one.clone(), two.clone()], 1e-4, &map).total();
    assert!(c2 >= c1);
    let strict = coverage(&[one.clone(), two], 1e-2, &map).total();
    assert!(strict <= c2);
    assert_eq!(coverage(&[], 1e-4, &map).total(), 0);
}

#[test]
fn ou_noise_reaches_its_stationary_variance() {
    let (theta, sigma, dt) = (0.5, 1.0, 0.1);
    let (agents, steps, burn) = (100u32, 10_000, 200);
    let spec = MapSpec::straight(200.0, 2, 0);
    let log = SceneLog {
        map_id: spec.map_id(),
        map: spec,
        dt,
        steps: (0..steps)
            .map(|_| (0..agents).map(|id| car(id, 0.0, 0.0, 0.0)).collect())
            .collect(),
        meta: EpisodeMeta::default(),
    };
    let noisy = ou_perturb(&log, theta, sigma, 9).unwrap();
    let (mut sum, mut n) = (0.0, 0.0);
    for frame in &noisy.steps[burn..] {
        for s in frame {
            sum += s.x * s.x + s.y * s.y;
            n += 2.0;
        }
    }
    let var = sum / n;
    let continuous = sigma * sigma / (2.0 * theta);
    let discrete = sigma * sigma / (2.0 * theta - theta * theta * dt);
    assert!((var - continuous).abs() / continuous < 0.05, "{var}");
    assert!((var - discrete).abs() / discrete < 0.02, "{var}");
    assert_eq!(ou_perturb(&log, theta, 0.0, 9).unwrap(), log);
}

#[test]
fn one_offroad_agent_of_four_is_a_quarter() {
    let spec = MapSpec::straight(200.0, 2, 0);
    let frames: Vec<Vec<AgentState>> = (0..30)
        .map(|t| {
            let x = 20.0 + t as f64;
            vec![car(0, x, -1.75, 10.0), car(1, x + 10.0, -1.75, 10.0), car(2, x + 20.0, 1.75, 10.0), car(3, x, 9.0, 10.0)]
        })
        .collect();
    let r = rollout(spec, frames);
    let rates = rollout_failures(&r, &gen_map(&r.map).unwrap().1);
    assert_eq!(rates.fr, 25.0);
    assert_eq!(rates.offroad_fr, 25.0);
    assert_eq!(rates.coll_fr, 0.0);
    assert_eq!(rates.offroad, 25.0);
}

#[test]
fn a_rear_end_fails_both_agents() {
    let spec = MapSpec::straight(200.0, 2, 0);
    let frames: Vec<Vec<AgentState>> = (0..20)
        .map(|t| {
            let gap = (10.0 - t as f64).max(3.0);
            vec![car(0, 20.0 + t as f64, -1.75, 10.0), car(1, 20.0 + t as f64 + gap, -1.75, 10.0)]
        })
        .collect();
    let r = rollout(spec, frames);
    let rates = rollout_failures(&r, &gen_map(&r.map).unwrap().1);
    assert_eq!((rates.fr, rates.coll_fr), (100.0, 100.0));
    assert_eq!((rates.coll_front, rates.coll_rear), (50.0, 50.0));
}

#[test]
fn histogram_distance_shifts_with_the_data() {
    let mut a = Histogram::new(0.0, 30.0, 20);
    let mut b = Histogram::new(0.0, 30.0, 20);
    for k in 0..10 {
        a.add(0.1 + k as f64);
        b.add(1.6 + k as f64);
    }
    assert!((a.wasserstein(&b) - 1.5).abs() < 1e-12);
    assert!((b.wasserstein(&a) - 1.5).abs() < 1e-12);
}

#[test]
fn displacement_of_a_shifted_replay_equals_the_shift() {
    let spec = MapSpec::straight(200.0, 2, 0);
    let steps: Vec<Vec<AgentState>> = (0..30)
        .map(|t| vec![car(0, 20.0 + t as f64, -1.75, 10.0), car(1, 40.0 + 0.5 * t as f64, 1.75, 5.0)])
        .collect();
    let log = SceneLog {
        map_id: spec.map_id(),
        map: spec.clone(),
        dt: 0.1,
        steps: steps.clone(),
        meta: EpisodeMeta::default(),
    };
    let shifted: Vec<Vec<AgentState>> = steps
        .iter()
        .map(|f| f.iter().map(|s| AgentState { x: s.x + 1.0, ..*s }).collect())
        .collect();
    let r = rollout(spec, shifted);
    let m = dataset_metrics(&[(&r, &log)]).unwrap();
    assert!((m.sade - 1.0).abs() < 1e-12 && (m.sfde - 1.0).abs() < 1e-12);
    assert_eq!((m.speed, m.lon_acc, m.lat_acc, m.jerk), (0.0, 0.0, 0.0, 0.0));
    assert!(!m.truncated);
}
