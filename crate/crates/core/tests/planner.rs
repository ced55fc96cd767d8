use bits_core::models::GoalPose;
use bits_core::planner::{
    collision_cost, corner_distance, offroad_cost, select_action, sigmoid, CandidatePlan, CornerReduction, CostMap,
    CostWeights, TieBreak,
};
use bits_core::world::{gen_map, AgentState, MapSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn car(id: u32, x: f64, y: f64, heading: f64) -> AgentState {
    AgentState::new(id, x, y, heading, 5.0, 4.0, 2.0).unwrap()
}

/// Straight path along `y` starting at `x0`.
fn path(x0: f64, y: f64, steps: usize) -> Vec<AgentState> {
    (0..steps).map(|k| car(0, x0 + k as f64, y, 0.0)).collect()
}

fn plan(trajectory: Vec<AgentState>, log_likelihood: f64) -> CandidatePlan {
    CandidatePlan {
        goal: GoalPose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            log_likelihood,
            cell: 0,
        },
        controls: Vec::new(),
        trajectory,
    }
}

fn road() -> CostMap {
    let (_, grid) = gen_map(&MapSpec::straight(200.0, 2, 0)).unwrap();
    assert!(grid.is_drivable(0.0, 0.0) && !grid.is_drivable(20.0, 11.0));
    CostMap::from_grid(&grid).unwrap()
}

#[test]
fn sigmoid_closed_form() {
    assert!((sigmoid(-4.0) - 0.017986).abs() < 1e-6);
    assert_eq!(sigmoid(0.0), 0.5);
    assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
}

#[test]
fn collision_cost_is_bounded_and_decreases_with_distance() {
    let w = CostWeights::default();
    let ego = path(0.0, 0.0, 10);
    let mut last = f64::INFINITY;
    for gap in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
        let other: Vec<AgentState> = ego.iter().map(|s| car(1, s.x, s.y + 2.0 + gap, 0.0)).collect();
        let c = collision_cost(&ego, &[other], &w).unwrap();
        assert!(c <= ego.len() as f64 && c < last, "gap {gap}: {c}");
        // Side by side the nearest-corner distance is exactly the lateral gap.
        let expected = ego.len() as f64 * sigmoid(-w.alpha * gap - w.beta);
        assert!((c - expected).abs() < 1e-12);
        last = c;
    }
    assert_eq!(collision_cost(&ego, &[], &w).unwrap(), 0.0);
}

#[test]
fn worst_neighbor_dominates_each_step() {
    let w = CostWeights::default();
    let ego = path(0.0, 0.0, 5);
    let near: Vec<AgentState> = ego.iter().map(|s| car(1, s.x, 3.0, 0.0)).collect();
    let far: Vec<AgentState> = ego.iter().map(|s| car(2, s.x, 12.0, 0.0)).collect();
    let both = collision_cost(&ego, &[near.clone(), far], &w).unwrap();
    assert_eq!(both, collision_cost(&ego, &[near], &w).unwrap());
}

#[test]
fn corner_distance_is_symmetric_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..500 {
        let a = car(0, rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.0..3.0));
        let b = car(1, rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.0..3.0));
        let (ab, ba) = (
            corner_distance(&a, &b, CornerReduction::NearestCorner).unwrap(),
            corner_distance(&b, &a, CornerReduction::NearestCorner).unwrap(),
        );
        assert!((ab - ba).abs() < 1e-12);
    }
}

#[test]
fn offroad_cost_is_zero_on_the_road_and_positive_off_it() {
    let map = road();
    assert_eq!(offroad_cost(&path(20.0, 0.0, 10), &map), 0.0);
    let off = offroad_cost(&path(20.0, 11.0, 10), &map);
    assert!(off > 0.0);
    // Farther from the road costs more, up to saturation.
    assert!(offroad_cost(&path(20.0, 7.0, 10), &map) < off);
}

#[test]
fn dominated_candidates_are_never_chosen() {
    let map = road();
    let w = CostWeights::default();
    let neighbor: Vec<AgentState> = path(20.0, 1.75, 10).iter().map(|s| car(1, s.x + 2.0, s.y, 0.0)).collect();
    let candidates = vec![
        plan(path(20.0, 1.75, 10), 0.0), // overlaps the neighbor
        plan(path(20.0, 11.0, 10), 0.0), // off the road
        plan(path(20.0, -1.75, 10), -5.0), // adjacent lane, clear
    ];
    let d = select_action(&candidates, &[neighbor], &map, &w).unwrap();
    assert_eq!(d.chosen, 2);
    assert_eq!(d.tie_break, TieBreak::Unique);
}

#[test]
fn ties_break_on_likelihood_then_index() {
    let map = road();
    let w = CostWeights::default();
    let same = path(0.0, 0.0, 5);
    let d = select_action(&[plan(same.clone(), -2.0), plan(same.clone(), -1.0), plan(same.clone(), -3.0)], &[], &map, &w).unwrap();
    assert_eq!((d.chosen, d.tie_break), (1, TieBreak::Likelihood));
    let d = select_action(&[plan(same.clone(), -2.0), plan(same.clone(), -1.0), plan(same, -1.0)], &[], &map, &w).unwrap();
    assert_eq!((d.chosen, d.tie_break), (1, TieBreak::Index));
}

#[test]
fn zero_weights_pick_the_most_likely_goal() {
    let map = road();
    let w = CostWeights {
        collision: 0.0,
        offroad: 0.0,
        ..CostWeights::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..20 {
        let cands: Vec<CandidatePlan> = (0..6)
            .map(|_| plan(path(0.0, rng.gen_range(-40.0..40.0), 5), rng.gen_range(-10.0..0.0)))
            .collect();
        let d = select_action(&cands, &[], &map, &w).unwrap();
        let brute = (0..cands.len())
            .max_by(|&a, &b| cands[a].goal.log_likelihood.total_cmp(&cands[b].goal.log_likelihood))
            .unwrap();
        assert_eq!(d.chosen, brute);
        assert!(d.total.iter().all(|&t| t == 0.0));
    }
}

#[test]
fn choice_matches_brute_force_and_is_scale_invariant() {
    let map = road();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..20 {
        let neighbor: Vec<AgentState> = path(rng.gen_range(15.0..25.0), rng.gen_range(-3.0..3.0), 8)
            .into_iter()
            .map(|s| AgentState { agent_id: 1, ..s })
            .collect();
        let cands: Vec<CandidatePlan> = (0..8)
            .map(|_| plan(path(20.0, rng.gen_range(-12.0..12.0), 8), rng.gen_range(-10.0..0.0)))
            .collect();
        let w = CostWeights {
            collision: rng.gen_range(0.1..20.0),
            offroad: rng.gen_range(0.1..5.0),
            ..CostWeights::default()
        };
        let d = select_action(&cands, std::slice::from_ref(&neighbor), &map, &w).unwrap();
        let brute: Vec<f64> = cands
            .iter()
            .map(|c| {
                w.collision * collision_cost(&c.trajectory, std::slice::from_ref(&neighbor), &w).unwrap()
                    + w.offroad * offroad_cost(&c.trajectory, &map)
            })
            .collect();
        let best = brute.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(brute[d.chosen], best);
        let scaled = CostWeights {
            collision: w.collision * 7.0,
            offroad: w.offroad * 7.0,
            ..w.clone()
        };
        assert_eq!(select_action(&cands, &[neighbor], &map, &scaled).unwrap().chosen, d.chosen);
    }
}

#[test]
fn empty_candidate_set_is_an_error() {
    assert!(select_action(&[], &[], &road(), &CostWeights::default()).is_err());
}
