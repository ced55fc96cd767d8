//! Independent oracles for the distance transform, the transport solver and
//! the box overlap test, with the randomized comparisons built on them.

use std::collections::VecDeque;

use bits_core::metrics::{emd, Distribution};
use bits_core::raster::distance_map;
use bits_core::simengine::boxes_overlap;
use bits_core::world::AgentState;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Multi-source BFS over 4-neighbors, clamped at `d`.
pub fn bfs_distance(mask: &[bool], h: usize, w: usize, d: u32) -> Vec<u32> {
    let mut dist = vec![u32::MAX; h * w];
    let mut queue = VecDeque::new();
    for (k, &m) in mask.iter().enumerate() {
        if m {
            dist[k] = 0;
            queue.push_back(k);
        }
    }
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k / w, k % w);
        let mut visit = |n: usize| {
            if dist[n] == u32::MAX {
                dist[n] = dist[k] + 1;
                queue.push_back(n);
            }
        };
        if i > 0 {
            visit(k - w);
        }
        if i + 1 < h {
            visit(k + w);
        }
        if j > 0 {
            visit(k - 1);
        }
        if j + 1 < w {
            visit(k + 1);
        }
    }
    dist.into_iter().map(|v| v.min(d)).collect()
}

pub fn lp_transport(a: &Distribution, b: &Distribution) -> f64 {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let mut vars = vec![vec![]; a.points.len()];
    for (i, pa) in a.points.iter().enumerate() {
        for pb in &b.points {
            let cost = (pa.0 - pb.0).hypot(pa.1 - pb.1);
            vars[i].push(p.add_var(cost, (0.0, f64::INFINITY)));
        }
    }
    for (i, row) in vars.iter().enumerate() {
        let terms: Vec<_> = row.iter().map(|&v| (v, 1.0)).collect();
        p.add_constraint(terms.as_slice(), ComparisonOp::Eq, a.mass[i]);
    }
    for j in 0..b.points.len() {
        let terms: Vec<_> = vars.iter().map(|row| (row[j], 1.0)).collect();
        p.add_constraint(terms.as_slice(), ComparisonOp::Eq, b.mass[j]);
    }
    p.solve().unwrap().objective()
}

/// Up to 12 points on a small lattice (so supports often share points) with
/// normalized random masses.
pub fn random_profile(rng: &mut ChaCha8Rng) -> Distribution {
    let n = rng.gen_range(1..=12);
    let mut points: Vec<(f64, f64)> = Vec::new();
    while points.len() < n {
        let p = (rng.gen_range(0..6) as f64 * 2.0, rng.gen_range(0..6) as f64 * 2.0);
        if !points.contains(&p) {
            points.push(p);
        }
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Distribution::new(points, raw.iter().map(|m| m / total).collect()).unwrap()
}

pub type Poly = Vec<(f64, f64)>;

pub fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sutherland-Hodgman clip of `subject` by the counter-clockwise convex `clip`.
pub fn clip(subject: &Poly, clip: &Poly) -> Poly {
    let mut out = subject.clone();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (cross(a, b, p), cross(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

pub fn area(poly: &Poly) -> f64 {
    (0..poly.len())
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            p.0 * q.1 - q.0 * p.1
        })
        .sum::<f64>()
        / 2.0
}

pub fn random_box(rng: &mut ChaCha8Rng, id: u32) -> AgentState {
    AgentState::new(
        id,
        rng.gen_range(-4.0..4.0),
        rng.gen_range(-4.0..4.0),
        rng.gen_range(-3.2..3.2),
        0.0,
        rng.gen_range(1.0..6.0),
        rng.gen_range(0.5..3.0),
    )
    .unwrap()
}

/// Compares the distance transform with BFS on 200 random 64 x 64 masks of
/// varying density; returns the number of masks compared.
pub fn distance_maps_agree(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    for case in 0..200 {
        let p = [0.002, 0.01, 0.05, 0.3][case % 4];
        let mask: Vec<bool> = (0..64 * 64).map(|_| rng.gen_bool(p)).collect();
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let d = rng.gen_range(1..=30);
        let ours = distance_map(&mask, 64, 64, d).map_err(|e| e.to_string())?;
        if ours != bfs_distance(&mask, 64, 64, d) {
            return Err(format!("mask {case} differs"));
        }
        compared += 1;
    }
    Ok(compared)
}

/// Largest gap between the transport solver and the LP over 100 random
/// profile pairs.
pub fn emd_max_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|_| {
            let (a, b) = (random_profile(&mut rng), random_profile(&mut rng));
            (emd(&a, &b).unwrap() - lp_transport(&a, &b)).abs()
        })
        .fold(0.0, f64::max)
}

/// Compares the separating-axis test with polygon clipping on 10k random box
/// pairs; returns the number of overlapping pairs.
pub fn overlap_tests_agree(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overlaps = 0;
    for case in 0..10_000 {
        let (a, b) = (random_box(&mut rng, 0), random_box(&mut rng, 1));
        let inter = clip(&a.corners().to_vec(), &b.corners().to_vec());
        let oracle = inter.len() >= 3 && area(&inter) > 0.0;
        if boxes_overlap(&a, &b) != oracle {
            return Err(format!("pair {case} differs: {a:?} {b:?}"));
        }
        overlaps += oracle as usize;
    }
    Ok(overlaps)
}
