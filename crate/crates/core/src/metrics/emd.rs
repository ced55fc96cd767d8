//! Exact earth mover's distance by the primal network simplex method on the
//! complete bipartite transport graph, with arcs generated on the fly.

use crate::error::{Result, SimError};

/// Tolerance on the total mass of a normalized profile.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A weighted point set in the plane.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Distribution {
    pub points: Vec<(f64, f64)>,
    pub mass: Vec<f64>,
}

impl Distribution {
    pub fn new(points: Vec<(f64, f64)>, mass: Vec<f64>) -> Result<Self> {
        if points.len() != mass.len() {
            return Err(SimError::InvalidArgument("points and masses differ in length".into()));
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(SimError::InvalidArgument("masses must be finite and non-negative".into()));
        }
        Ok(Self { points, mass })
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

const ROOT_COST_FACTOR: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dir {
    /// Tree arc points from the node to its parent.
    Up,
    /// Tree arc points from the parent to the node.
    Down,
}

#[derive(Clone, Copy, Debug)]
struct TreeArc {
    from: usize,
    to: usize,
    cost: f64,
    flow: f64,
    id: usize,
}

/// Transport problem between `m` supplies and `n` demands. Node `i < m` is a
/// supply, `m + j` a demand, `m + n` the artificial root.
struct Simplex {
    /// Ground distances, row-major by supply.
    cost: Vec<f64>,
    m: usize,
    n: usize,
    big: f64,
    arcs: Vec<TreeArc>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    dir: Vec<Dir>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    adj: Vec<Vec<usize>>,
    queue: Vec<usize>,
}

impl Simplex {
    fn root(&self) -> usize {
        self.m + self.n
    }

    /// Arc `(from, to, cost)` for id `k`: real arcs first, then one artificial arc per node.
    fn arc(&self, k: usize) -> (usize, usize, f64) {
        let real = self.m * self.n;
        if k < real {
            (k / self.n, self.m + k % self.n, self.cost[k])
        } else {
            let v = k - real;
            if v < self.m {
                (v, self.root(), self.big)
            } else {
                (self.root(), v, self.big)
            }
        }
    }

    fn arc_count(&self) -> usize {
        self.m * self.n + self.m + self.n
    }

    /// Labels the tree component of `top` (reached without crossing back to
    /// `above`) with parents, depths and potentials, `top` hanging below `above`.
    fn hang(&mut self, top: usize, above: Option<(usize, usize)>) {
        self.queue.clear();
        match above {
            None => {
                self.parent[top] = usize::MAX;
                self.depth[top] = 0;
                self.pi[top] = 0.0;
            }
            Some((p, k)) => self.link(p, top, k),
        }
        self.queue.push(top);
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            for idx in 0..self.adj[u].len() {
                let k = self.adj[u][idx];
                if self.parent[u] != usize::MAX && self.pred[u] == k {
                    continue;
                }
                let a = self.arcs[k];
                let v = if a.from == u { a.to } else { a.from };
                self.link(u, v, k);
                self.queue.push(v);
            }
        }
    }

    /// Makes `u` the parent of `v` through tree arc `k`.
    fn link(&mut self, u: usize, v: usize, k: usize) {
        let a = self.arcs[k];
        let dir = if a.from == u { Dir::Down } else { Dir::Up };
        self.parent[v] = u;
        self.pred[v] = k;
        self.dir[v] = dir;
        self.depth[v] = self.depth[u] + 1;
        // Reduced cost c + pi[from] - pi[to] vanishes on tree arcs.
        self.pi[v] = match dir {
            Dir::Down => self.pi[u] + a.cost,
            Dir::Up => self.pi[u] - a.cost,
        };
    }

    fn init_tree(&mut self) {
        for (k, a) in self.arcs.iter().enumerate() {
            self.adj[a.from].push(k);
            self.adj[a.to].push(k);
        }
        let root = self.root();
        self.hang(root, None);
    }

    fn reduced(&self, k: usize) -> f64 {
        let (u, v, c) = self.arc(k);
        c + self.pi[u] - self.pi[v]
    }

    /// Most negative reduced cost among real arcs `lo..hi` of supply row `i`.
    fn price_row(&self, i: usize, lo: usize, hi: usize, best: &mut Option<(usize, f64)>, eps: f64) {
        let base = i * self.n;
        let pi_i = self.pi[i];
        let costs = &self.cost[base + lo..base + hi];
        let pis = &self.pi[self.m + lo..self.m + hi];
        let mut bound = best.map_or(-eps, |(_, b)| b);
        for (j, (c, p)) in costs.iter().zip(pis).enumerate() {
            let rc = c + pi_i - p;
            if rc < bound {
                bound = rc;
                *best = Some((base + lo + j, rc));
            }
        }
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        a
    }

    /// One pivot on entering arc `k`.
    fn pivot(&mut self, k: usize) {
        let (first, second, cost) = self.arc(k);
        let join = self.join(first, second);
        let mut delta = f64::INFINITY;
        let mut out: Option<usize> = None;
        // Arcs pointing up on the source side and down on the target side lose flow.
        let mut u = first;
        while u != join {
            if self.dir[u] == Dir::Up && self.arcs[self.pred[u]].flow < delta {
                delta = self.arcs[self.pred[u]].flow;
                out = Some(u);
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if self.dir[u] == Dir::Down && self.arcs[self.pred[u]].flow <= delta {
                delta = self.arcs[self.pred[u]].flow;
                out = Some(u);
            }
            u = self.parent[u];
        }
        let out = out.expect("bounded transport problem always has a blocking arc");
        let on_first = {
            let mut u = first;
            while u != join && u != out {
                u = self.parent[u];
            }
            u == out
        };
        let mut u = first;
        while u != join {
            let a = &mut self.arcs[self.pred[u]];
            a.flow += if self.dir[u] == Dir::Up { -delta } else { delta };
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            let a = &mut self.arcs[self.pred[u]];
            a.flow += if self.dir[u] == Dir::Up { delta } else { -delta };
            u = self.parent[u];
        }
        let leaving = self.pred[out];
        let old = self.arcs[leaving];
        self.adj[old.from].retain(|&x| x != leaving);
        self.adj[old.to].retain(|&x| x != leaving);
        self.arcs[leaving] = TreeArc {
            from: first,
            to: second,
            cost,
            flow: delta,
            id: k,
        };
        self.adj[first].push(leaving);
        self.adj[second].push(leaving);
        // Only the subtree cut off below `out` moves; it now hangs from the entering arc.
        let (inner, outer) = if on_first { (first, second) } else { (second, first) };
        self.hang(inner, Some((outer, leaving)));
    }

    fn solve(&mut self) -> f64 {
        let total = self.arc_count();
        let block = ((total as f64).sqrt().ceil() as usize).max(10);
        let scale = self.big.max(1.0);
        let eps = 1e-12 * scale;
        let real = self.m * self.n;
        let mut next = 0;
        loop {
            let mut best: Option<(usize, f64)> = None;
            let mut scanned = 0;
            let mut in_block = 0;
            while scanned < total {
                // Real arcs are priced a row segment at a time.
                let len = if next < real {
                    let (i, j) = (next / self.n, next % self.n);
                    let len = (self.n - j).min(block - in_block).min(total - scanned);
                    self.price_row(i, j, j + len, &mut best, eps);
                    len
                } else {
                    let rc = self.reduced(next);
                    if rc < -eps && best.is_none_or(|(_, b)| rc < b) {
                        best = Some((next, rc));
                    }
                    1
                };
                next = (next + len) % total;
                scanned += len;
                in_block += len;
                if in_block >= block {
                    if best.is_some() {
                        break;
                    }
                    in_block = 0;
                }
            }
            match best {
                Some((k, _)) => self.pivot(k),
                None => break,
            }
        }
        self.arcs
            .iter()
            .filter(|a| a.id < real)
            .map(|a| a.flow.max(0.0) * a.cost)
            .sum()
    }
}

/// Minimum cost of moving `supply` onto `demand` under Euclidean ground
/// distance. Totals must agree to within [`MASS_TOLERANCE`] of their size.
pub fn transport_cost(supply: &Distribution, demand: &Distribution) -> Result<f64> {
    let (s_total, d_total) = (supply.total(), demand.total());
    if (s_total - d_total).abs() > MASS_TOLERANCE * s_total.max(d_total).max(1.0) {
        return Err(SimError::InvalidArgument(format!(
            "unbalanced transport: {s_total} vs {d_total}"
        )));
    }
    let keep = |d: &Distribution| -> (Vec<(f64, f64)>, Vec<f64>) {
        d.points
            .iter()
            .zip(&d.mass)
            .filter(|(_, m)| **m > 0.0)
            .map(|(p, m)| (*p, *m))
            .unzip()
    };
    let (src, smass) = keep(supply);
    let (dst, mut dmass) = keep(demand);
    if src.is_empty() || dst.is_empty() {
        return Ok(0.0);
    }
    // Absorb rounding so both sides carry exactly the same total.
    let ratio = smass.iter().sum::<f64>() / dmass.iter().sum::<f64>();
    dmass.iter_mut().for_each(|m| *m *= ratio);

    let (m, n) = (src.len(), dst.len());
    let (lo, hi) = src.iter().chain(&dst).fold(
        ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| ((lo.0.min(p.0), lo.1.min(p.1)), (hi.0.max(p.0), hi.1.max(p.1))),
    );
    let diameter = (hi.0 - lo.0).hypot(hi.1 - lo.1);
    let big = ROOT_COST_FACTOR * (diameter + 1.0) * (m + n) as f64;
    let nodes = m + n + 1;
    let mut arcs = Vec::with_capacity(m + n);
    for (i, &mass) in smass.iter().enumerate() {
        arcs.push(TreeArc {
            from: i,
            to: m + n,
            cost: big,
            flow: mass,
            id: m * n + i,
        });
    }
    for (j, &mass) in dmass.iter().enumerate() {
        arcs.push(TreeArc {
            from: m + n,
            to: m + j,
            cost: big,
            flow: mass,
            id: m * n + m + j,
        });
    }
    let cost = src
        .iter()
        .flat_map(|a| dst.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1)))
        .collect();
    let mut s = Simplex {
        cost,
        m,
        n,
        big,
        arcs,
        parent: vec![0; nodes],
        pred: vec![0; nodes],
        dir: vec![Dir::Up; nodes],
        depth: vec![0; nodes],
        pi: vec![0.0; nodes],
        adj: vec![Vec::new(); nodes],
        queue: Vec::with_capacity(nodes),
    };
    s.init_tree();
    Ok(s.solve())
}

/// Earth mover's distance between two normalized distributions. Mass the two
/// share at identical points stays in place, which leaves the optimum unchanged
/// under a metric ground distance and shrinks the problem.
pub fn emd(a: &Distribution, b: &Distribution) -> Result<f64> {
    for (name, d) in [("first", a), ("second", b)] {
        let t = d.total();
        if (t - 1.0).abs() > MASS_TOLERANCE {
            return Err(SimError::InvalidArgument(format!("{name} distribution has mass {t}, expected 1")));
        }
    }
    let mut shared: std::collections::HashMap<(u64, u64), f64> = Default::default();
    for (p, &m) in b.points.iter().zip(&b.mass) {
        *shared.entry((p.0.to_bits(), p.1.to_bits())).or_default() += m;
    }
    let mut supply = Distribution::default();
    for (p, &m) in a.points.iter().zip(&a.mass) {
        let key = (p.0.to_bits(), p.1.to_bits());
        let other = shared.entry(key).or_default();
        let common = m.min(*other);
        *other -= common;
        if m - common > 0.0 {
            supply.points.push(*p);
            supply.mass.push(m - common);
        }
    }
    let mut demand = Distribution::default();
    for (p, &m) in b.points.iter().zip(&b.mass) {
        let key = (p.0.to_bits(), p.1.to_bits());
        if let Some(rest) = shared.get_mut(&key) {
            let take = rest.min(m);
            if take > 0.0 {
                demand.points.push(*p);
                demand.mass.push(take);
                *rest -= take;
            }
        }
    }
    let moved = supply.total();
    if moved <= MASS_TOLERANCE || demand.total() <= MASS_TOLERANCE {
        return Ok(0.0);
    }
    transport_cost(&supply, &demand)
}
