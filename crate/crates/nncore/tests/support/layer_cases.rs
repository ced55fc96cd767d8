//! Finite-difference gradient cases, one per layer type. Shared by the unit
//! tests and the acceptance run.

use nncore::gradcheck::{check_gradients, GradCheckReport};
use nncore::layers::{BackboneConfig, Conv2d, Encoder, Linear, Mlp, UNetDecoder};
use nncore::loss::{l2_traj_loss, masked_residual_loss, spatial_cross_entropy, ResidualTarget, TrajTarget, TrajVars};
use nncore::{Graph, ParamStore, RoiRequest, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-3;
pub const SAMPLES: usize = 120;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum of all outputs so every element contributes a distinct gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = g.input(random_tensor(&shape, &mut rng));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn run<F>(store: &ParamStore, f: F) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> nncore::Result<(Graph, Var)>,
{
    check_gradients(store, f, SAMPLES, EPS, &mut ChaCha8Rng::seed_from_u64(99)).unwrap()
}

pub type Case = (&'static str, fn() -> GradCheckReport);

/// Every case by name.
pub const CASES: [Case; 7] = [
    ("conv", conv_stride1_and_stride2),
    ("mlp", linear_relu_mlp),
    ("unet", encoder_decoder_with_skips),
    ("roi", roi_align_and_pooling),
    ("elementwise", elementwise_ops),
    ("losses", losses_and_reshapes),
    ("traj", trajectory_loss_through_tanh_head),
];

pub fn conv_stride1_and_stride2() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let c1 = Conv2d::new(&mut store, "c1", 3, 5, 3, 1, false, &mut rng).unwrap();
    let c2 = Conv2d::new(&mut store, "c2", 5, 4, 3, 2, false, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let t = random_tensor(store.get(id).shape(), &mut rng);
        *store.get_mut(id) = t;
    }
    let x = random_tensor(&[2, 3, 7, 6], &mut rng);
    run(&store, |s| {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let h = c1.forward(&mut g, s, xi)?;
        let h = g.tanh(h);
        let y = c2.forward(&mut g, s, h)?;
        let l = project(&mut g, y, 5);
        Ok((g, l))
    })
}

pub fn linear_relu_mlp() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[6, 16, 8, 3], &mut rng).unwrap();
    let last = store.find("mlp.2.weight").unwrap();
    *store.get_mut(last) = random_tensor(&[3, 8], &mut rng);
    let x = random_tensor(&[5, 6], &mut rng);
    run(&store, |s| {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let y = mlp.forward(&mut g, s, xi)?;
        let l = project(&mut g, y, 6);
        Ok((g, l))
    })
}

pub fn encoder_decoder_with_skips() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let cfg = BackboneConfig { stages: vec![3, 4, 4], feature: 5 };
    let enc = Encoder::new(&mut store, "enc", 2, &cfg, &mut rng).unwrap();
    let dec = UNetDecoder::new(&mut store, "dec", 2, &cfg, 0, 4, &mut rng).unwrap();
    let dec1 = UNetDecoder::new(&mut store, "dec1", 2, &cfg, 1, 2, &mut rng).unwrap();
    for name in ["dec.head.weight", "dec1.head.weight"] {
        let id = store.find(name).unwrap();
        let t = random_tensor(store.get(id).shape(), &mut rng);
        *store.get_mut(id) = t;
    }
    let x = random_tensor(&[2, 2, 8, 8], &mut rng);
    run(&store, |s| {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let e = enc.forward(&mut g, s, xi)?;
        let y = dec.forward(&mut g, s, xi, &e)?;
        let y1 = dec1.forward(&mut g, s, xi, &e)?;
        let a = project(&mut g, y, 7);
        let b = project(&mut g, y1, 8);
        let c = project(&mut g, e.global, 9);
        let ab = g.add(a, b)?;
        let l = g.add(ab, c)?;
        Ok((g, l))
    })
}

pub fn roi_align_and_pooling() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let feat = store.add("feat", random_tensor(&[2, 3, 6, 5], &mut rng)).unwrap();
    let rois: Vec<RoiRequest> = (0..3)
        .map(|r| RoiRequest {
            batch: r % 2,
            points: (0..49)
                .map(|i| (0.3 + (i % 7) as f64 * 0.61 + r as f64 * 0.2, 0.2 + (i / 7) as f64 * 0.73))
                .collect(),
        })
        .collect();
    run(&store, |s| {
        let mut g = Graph::new();
        let f = g.param(s, feat);
        let crop = g.roi_align(f, &rois)?;
        let up = g.upsample2x(f)?;
        let pooled = g.global_avg_pool(up)?;
        let a = project(&mut g, crop, 10);
        let b = project(&mut g, pooled, 11);
        let l = g.add(a, b)?;
        Ok((g, l))
    })
}

pub fn elementwise_ops() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&[60], &mut rng)).unwrap();
    let b = store.add("b", random_tensor(&[60], &mut rng)).unwrap();
    run(&store, |s| {
        let mut g = Graph::new();
        let av = g.param(s, a);
        let bv = g.param(s, b);
        let sa = g.sin(av);
        let cb = g.cos(bv);
        let m = g.mul(sa, cb)?;
        let d = g.sub(av, bv)?;
        let w = g.scale(d, 3.0);
        let w = g.wrap_angle(w);
        let q = g.square(w);
        let c = g.clamp(bv, -0.5, 0.5);
        let o = g.offset(c, 2.0);
        let t = g.mul(q, o)?;
        let y = g.add(m, t)?;
        let l = project(&mut g, y, 12);
        Ok((g, l))
    })
}

pub fn losses_and_reshapes() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let map = store.add("map", random_tensor(&[3, 4, 5, 6], &mut rng)).unwrap();
    let feats = store.add("feats", random_tensor(&[3, 8], &mut rng)).unwrap();
    let targets = [
        ResidualTarget { cell: 4, dx: 0.2, dy: -0.1, heading: 3.0 },
        ResidualTarget { cell: 29, dx: -0.4, dy: 0.3, heading: -2.9 },
        ResidualTarget { cell: 11, dx: 0.0, dy: 0.0, heading: 0.1 },
    ];
    run(&store, |s| {
        let mut g = Graph::new();
        let m = g.param(s, map);
        let f = g.param(s, feats);
        let l0 = g.reshape(m, &[3, 4, 30])?;
        let l0 = g.reshape(l0, &[3, 120])?;
        let ce = spatial_cross_entropy(&mut g, l0, &[3, 77, 119])?;
        let res = masked_residual_loss(&mut g, m, &targets)?;
        let cols: Vec<Var> = (0..4).map(|k| g.column(f, 2 * k)).collect::<nncore::Result<_>>()?;
        let st = g.stack_columns(&cols)?;
        let cat = g.concat(&[st, f])?;
        let c = project(&mut g, cat, 13);
        let a = g.add(ce, res)?;
        let l = g.add(a, c)?;
        Ok((g, l))
    })
}

pub fn trajectory_loss_through_tanh_head() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "head", 8, 2 * 6, false, &mut rng).unwrap();
    let x = random_tensor(&[3, 8], &mut rng);
    let target = TrajTarget {
        x: random_tensor(&[3, 6], &mut rng),
        y: random_tensor(&[3, 6], &mut rng),
        heading: random_tensor(&[3, 6], &mut rng),
    };
    run(&store, |s| {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let raw = lin.forward(&mut g, s, xi)?;
        let mut pred = TrajVars::default();
        for k in 0..6 {
            let a = g.column(raw, 2 * k)?;
            let b = g.column(raw, 2 * k + 1)?;
            pred.x.push(a);
            pred.y.push(b);
            let t = g.tanh(a);
            pred.heading.push(t);
        }
        let l = l2_traj_loss(&mut g, &pred, &target)?;
        Ok((g, l))
    })
}

