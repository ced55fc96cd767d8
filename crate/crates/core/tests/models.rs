use bits_core::models::{
    likelihood_score, load_goal, load_occupancy, load_traj, sample_goals, save_goal, save_occupancy, train_goal,
    train_occupancy, GoalMap, GoalNet, GoalSampling, ModelConfig, OccupancyNet, TrainConfig,
};
use bits_core::raster::{rasterize_context, RasterConfig};
use bits_core::world::{gen_expert_log, gen_map, split_indices, AgentState, Dataset, EpisodeMeta, MapSpec, Scene, SceneLog};
use bits_core::SimError;
use nncore::layers::BackboneConfig;
use nncore::loss::spatial_cross_entropy;
use nncore::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        raster: RasterConfig {
            size: 32,
            pixel_size: 1.0,
            history: 2,
        },
        backbone: BackboneConfig {
            stages: vec![4, 4],
            feature: 8,
        },
        horizon: 5,
        hidden: 16,
        occupancy_cell: 2.0,
        occupancy_steps: 5,
        ..ModelConfig::default()
    }
}

fn slow_log(steps: usize) -> SceneLog {
    let spec = MapSpec::straight(200.0, 2, 0);
    SceneLog {
        map_id: spec.map_id(),
        map: spec,
        dt: 0.1,
        steps: (0..steps)
            .map(|t| {
                let x = 20.0 + 0.5 * t as f64;
                vec![
                    AgentState::new(0, x, -1.75, 0.0, 5.0, 4.0, 2.0).unwrap(),
                    AgentState::new(1, x + 12.0, 1.75, 0.0, 5.0, 4.0, 2.0).unwrap(),
                ]
            })
            .collect(),
        meta: EpisodeMeta::default(),
    }
}

fn small_dataset(cfg: &ModelConfig) -> Dataset {
    let log = gen_expert_log(&MapSpec::straight(200.0, 2, 4), 3, 4.0, 4).unwrap();
    Dataset::build(vec![Scene::new(log).unwrap()], 5, cfg.horizon, &cfg.raster).unwrap()
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        iterations: 15,
        batch_size: 4,
        lr: 1e-2,
        seed: 3,
        val_every: 5,
        val_samples: 8,
        stop_ratio: None,
    }
}

#[test]
fn uniform_cross_entropy_is_log_n() {
    for n in [2usize, 7, 1024, 4096] {
        let mut g = Graph::new();
        let logits = g.input(Tensor::zeros(&[3, n]));
        let ce = spatial_cross_entropy(&mut g, logits, &[0, n / 2, n - 1]).unwrap();
        assert!((g.value(ce).item() - (n as f64).ln()).abs() < 1e-9, "n = {n}");
    }
}

#[test]
fn fresh_goal_net_is_uniform() {
    let cfg = tiny();
    let net = GoalNet::new(&cfg, 1).unwrap();
    let log = slow_log(10);
    let (_, grid) = gen_map(&log.map).unwrap();
    let ctx = rasterize_context(&log, &grid, 0, 5, &cfg.raster).unwrap();
    let map = &net.predict(&[ctx.raster]).unwrap()[0];
    let n = cfg.raster.cells() as f64;
    for p in map.probabilities() {
        assert!((p - 1.0 / n).abs() < 1e-15);
    }
    // All logits tie, so the argmax is the first cell.
    assert_eq!(map.argmax(), 0);
    assert!((map.decode(17).log_likelihood + n.ln()).abs() < 1e-12);
}

#[test]
fn fresh_occupancy_net_scores_one_over_cells() {
    let cfg = tiny();
    let net = OccupancyNet::new(&cfg, 2).unwrap();
    let log = slow_log(21);
    let (_, grid) = gen_map(&log.map).unwrap();
    let s = likelihood_score(&log, &grid, &net, 5).unwrap();
    let cells = (cfg.occupancy_side() * cfg.occupancy_side()) as f64;
    assert!((s.score - 1.0 / cells).abs() < 1e-15, "{s:?}");
    assert!(!s.short);
    assert_eq!(s.anchors, 4);
}

#[test]
fn occupancy_maps_are_distributions_per_step() {
    let cfg = tiny();
    let mut net = OccupancyNet::new(&cfg, 3).unwrap();
    let data = small_dataset(&cfg);
    let idx: Vec<usize> = (0..data.len()).collect();
    train_occupancy(&mut net, &data, &quick_train(), &idx, &[]).unwrap();
    let rasters: Vec<Tensor> = (0..3).map(|i| data.context(i).unwrap().raster).collect();
    for pred in net.predict(&rasters).unwrap() {
        assert_eq!(pred.probs.len(), cfg.occupancy_steps);
        for step in &pred.probs {
            assert!((step.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(step.iter().all(|&p| p >= 0.0));
        }
    }
}

/// A goal map with logits `ln 3` and `0` at two cells and a negligible rest.
fn two_cell_map(raster: &RasterConfig) -> GoalMap {
    let n = raster.cells();
    let mut block = vec![0.0; 4 * n];
    block[..n].fill(-200.0);
    block[3] = 3f64.ln();
    block[7] = 0.0;
    block[n + 3] = 0.2;
    block[3 * n + 3] = 0.1;
    GoalMap::new(raster, &block)
}

#[test]
fn goal_samples_follow_the_tempered_distribution() {
    let raster = tiny().raster;
    let map = two_cell_map(&raster);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let k = 20_000;
    for (t, expected) in [(1.0, 0.75), (2.0, 3f64.sqrt() / (3f64.sqrt() + 1.0))] {
        let goals = sample_goals(&map, k, GoalSampling::Temperature(t), &mut rng).unwrap();
        assert!(goals.iter().all(|g| g.cell == 3 || g.cell == 7));
        let freq = goals.iter().filter(|g| g.cell == 3).count() as f64 / k as f64;
        // Four standard errors of a binomial proportion.
        let tol = 4.0 * (expected * (1.0 - expected) / k as f64).sqrt();
        assert!((freq - expected).abs() < tol, "t = {t}: {freq}");
    }
    let best = sample_goals(&map, 5, GoalSampling::Max, &mut rng).unwrap();
    assert_eq!(best.len(), 1);
    assert_eq!(best[0].cell, 3);
    let (cx, _) = raster.cell_center(3);
    assert!((best[0].x - cx - 0.2).abs() < 1e-12 && best[0].heading == 0.1);
    assert!((best[0].log_likelihood - 0.75f64.ln()).abs() < 1e-9);
}

#[test]
fn bad_sampling_arguments_are_errors() {
    let map = two_cell_map(&tiny().raster);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    assert!(sample_goals(&map, 0, GoalSampling::Max, &mut rng).is_err());
    for t in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(sample_goals(&map, 3, GoalSampling::Temperature(t), &mut rng).is_err(), "{t}");
    }
}

#[test]
fn seeded_construction_and_training_are_deterministic() {
    let cfg = tiny();
    let data = small_dataset(&cfg);
    assert!(data.len() >= 8, "{}", data.len());
    let (train, val) = split_indices(data.len(), 0.25, 5);
    let run = || {
        let mut net = GoalNet::new(&cfg, 9).unwrap();
        let report = train_goal(&mut net, &data, &quick_train(), &train, &val).unwrap();
        (net, report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    for id in a.store.ids() {
        assert_eq!(a.store.get(id), b.store.get(id), "{}", a.store.name(id));
    }
    assert_eq!(ra.last, rb.last);
    assert_eq!(ra.val_curve, rb.val_curve);
    assert_ne!(GoalNet::new(&cfg, 10).unwrap().store.get(a.store.ids().next().unwrap()), a.store.get(a.store.ids().next().unwrap()));
}

#[test]
fn empty_training_set_is_an_error() {
    let cfg = tiny();
    let data = small_dataset(&cfg);
    let mut net = GoalNet::new(&cfg, 1).unwrap();
    assert!(matches!(train_goal(&mut net, &data, &quick_train(), &[], &[]), Err(SimError::EmptyDataset)));
}

#[test]
fn checkpoints_round_trip_and_check_their_kind() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let goal_path = dir.path().join("goal.json");
    let occ_path = dir.path().join("occ.json");
    let mut net = GoalNet::new(&cfg, 6).unwrap();
    let data = small_dataset(&cfg);
    let idx: Vec<usize> = (0..data.len()).collect();
    train_goal(&mut net, &data, &quick_train(), &idx, &[]).unwrap();
    save_goal(&net, &goal_path).unwrap();
    let back = load_goal(&goal_path).unwrap();
    assert_eq!(back.config, net.config);
    let raster = data.context(0).unwrap().raster;
    assert_eq!(back.predict(std::slice::from_ref(&raster)).unwrap(), net.predict(&[raster]).unwrap());

    save_occupancy(&OccupancyNet::new(&cfg, 7).unwrap(), &occ_path).unwrap();
    assert!(load_occupancy(&occ_path).is_ok());
    assert!(load_goal(&occ_path).is_err());
    assert!(load_traj(&goal_path).is_err());
    assert!(matches!(load_goal(&dir.path().join("none.json")), Err(SimError::MissingCheckpoint(_))));
}
