//! Finite-difference check of the dynamics-in-the-loop trajectory decoder.

use bits_core::dynamics::{decode_rollout_tape, Limits};
use nncore::gradcheck::{check_gradients, GradCheckReport};
use nncore::loss::{l2_traj_loss, TrajTarget};
use nncore::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Five agents over 12 steps: 120 raw control parameters, all of them checked.
pub fn decoder_gradcheck() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (n, h) = (5, 12);
    let limits = Limits::default();
    let mut store = ParamStore::new();
    let data: Vec<f64> = (0..n * 2 * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let raw = store.add("raw", Tensor::new(vec![n, 2 * h], data).unwrap()).unwrap();
    // Start speeds far enough from both bounds that the speed clamp stays inactive.
    let speeds: Vec<f64> = (0..n).map(|_| rng.gen_range(13.0..17.0)).collect();
    let mut target = |scale: f64| {
        let d: Vec<f64> = (0..n * h).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor::new(vec![n, h], d).unwrap()
    };
    let target = TrajTarget {
        x: target(20.0),
        y: target(3.0),
        heading: target(0.5),
    };
    check_gradients(
        &store,
        |s| {
            let mut g = Graph::new();
            let r = g.param(s, raw);
            let traj = decode_rollout_tape(&mut g, r, &speeds, &limits).expect("decoder input shape");
            let l = l2_traj_loss(&mut g, &traj, &target)?;
            Ok((g, l))
        },
        120,
        1e-5,
        &mut ChaCha8Rng::seed_from_u64(24),
    )
    .unwrap()
}
