//! Reverse-mode tape. Every op evaluates eagerly and records what its
//! backward pass needs; [`Graph::backward`] walks the tape in reverse.

use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::{Gradients, NnError, ParamId, ParamStore, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One bilinear tap set: four `(flat index, weight)` pairs within a plane.
pub type Taps = [(usize, f64); 4];

/// Bilinear taps for continuous pixel coordinates `(u, v)` = (column, row),
/// where integer coordinates are pixel centers. Coordinates are clipped to
/// the grid so border samples replicate the edge.
pub fn bilinear_taps(height: usize, width: usize, u: f64, v: f64) -> Taps {
    let u = u.clamp(0.0, (width - 1) as f64);
    let v = v.clamp(0.0, (height - 1) as f64);
    let u0 = (u.floor() as usize).min(width - 1);
    let v0 = (v.floor() as usize).min(height - 1);
    let u1 = (u0 + 1).min(width - 1);
    let v1 = (v0 + 1).min(height - 1);
    let fu = u - u0 as f64;
    let fv = v - v0 as f64;
    [
        (v0 * width + u0, (1.0 - fu) * (1.0 - fv)),
        (v0 * width + u1, fu * (1.0 - fv)),
        (v1 * width + u0, (1.0 - fu) * fv),
        (v1 * width + u1, fu * fv),
    ]
}

/// Sampling lattice of one region of interest.
#[derive(Clone, Debug)]
pub struct RoiRequest {
    /// Batch item the region is cropped from.
    pub batch: usize,
    /// `(column, row)` sample positions in feature pixel coordinates.
    pub points: Vec<(f64, f64)>,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    WrapAngle(Var),
    Upsample2x(Var),
    Concat {
        inputs: Vec<Var>,
        inner: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Reshape(Var),
    Column {
        x: Var,
        index: usize,
        cols: usize,
    },
    StackColumns(Vec<Var>),
    Roi {
        x: Var,
        taps: Vec<(usize, Taps)>,
        samples: usize,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    LogSoftmax {
        x: Var,
        cols: usize,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of one forward evaluation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -PI to PI already; keep the half-open (-PI, PI] range.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input (no gradient is propagated into it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], value: f64) -> Var {
        self.input(Tensor::full(shape, value))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// 2-D convolution, `x [N, C, H, W]`, `w [O, C, k, k]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || xs[1] != ws[1] {
            return Err(shape_err("conv2d", format!("input {xs:?} weight {ws:?}")));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err("conv2d", format!("bias {:?} for {} outputs", self.shape(b), ws[0])));
        }
        if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2] {
            return Err(shape_err("conv2d", format!("kernel {} does not fit {xs:?}", ws[2])));
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            pad,
        };
        let (n, o) = (xs[0], ws[0]);
        let rows = geom.rows();
        let p = geom.out_pixels();
        let plane = geom.channels * geom.height * geom.width;
        let direct = geom.is_pointwise();
        let mut cols = if direct { Vec::new() } else { vec![0.0; rows * p] };
        let mut out = vec![0.0; n * o * p];
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for i in 0..n {
            let xi = &xv[i * plane..(i + 1) * plane];
            let c: &[f64] = if direct {
                xi
            } else {
                im2col(xi, &geom, &mut cols);
                &cols
            };
            let y = &mut out[i * o * p..(i + 1) * o * p];
            for (oc, chunk) in y.chunks_mut(p).enumerate() {
                chunk.fill(bv[oc]);
            }
            gemm(o, rows, p, 1.0, wv, rows, 1, c, p, 1, 1.0, y, p, 1);
        }
        let value = Tensor::new(vec![n, o, geom.out_height(), geom.out_width()], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    /// Fully-connected layer, `x [N, I]`, `w [O, I]`, `b [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(shape_err(
                "linear",
                format!("input {xs:?} weight {ws:?} bias {:?}", self.shape(b)),
            ));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bv);
        }
        gemm(n, i, o, 1.0, self.value(x).data(), i, 1, self.value(w).data(), 1, i, 1.0, &mut out, o, 1);
        Ok(self.push(Tensor::new(vec![n, o], out)?, Op::Linear { x, w, b }))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn offset(&mut self, x: Var, delta: f64) -> Var {
        self.unary(x, |v| v + delta, Op::Offset(x))
    }

    /// Elementwise clamp; the gradient passes only where the input is inside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Wraps angles to `(-pi, pi]`; piecewise identity, so the gradient is 1.
    pub fn wrap_angle(&mut self, x: Var) -> Var {
        self.unary(x, wrap_angle, Op::WrapAngle(x))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("upsample2x", format!("{xs:?}")));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for r in 0..2 * h {
                for c in 0..2 * w {
                    d[r * 2 * w + c] = s[(r / 2) * w + c / 2];
                }
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample2x(x)))
    }

    /// Concatenates along axis 1 (channels for `[N, C, H, W]`, features for `[N, F]`).
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?)
            .to_vec();
        if first.len() < 2 {
            return Err(shape_err("concat", format!("{first:?}")));
        }
        let mut inner = Vec::with_capacity(inputs.len());
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(shape_err("concat", format!("{s:?} vs {first:?}")));
            }
            channels += s[1];
            inner.push(s[1..].iter().product::<usize>());
        }
        let total: usize = inner.iter().sum();
        let n = first[0];
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&v, &len) in inputs.iter().zip(&inner) {
                out.extend_from_slice(&self.value(v).data()[i * len..(i + 1) * len]);
            }
        }
        let mut shape = first.clone();
        shape[1] = channels;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                inner,
            },
        ))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("global_avg_pool", format!("{xs:?}")));
        }
        let hw = xs[2] * xs[3];
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![xs[0], xs[1]], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Column `index` of a `[N, K]` matrix as a `[N]` vector.
    pub fn column(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || index >= xs[1] {
            return Err(shape_err("column", format!("column {index} of {xs:?}")));
        }
        let cols = xs[1];
        let data = self.value(x).data().iter().skip(index).step_by(cols).copied().collect();
        Ok(self.push(Tensor::new(vec![xs[0]], data)?, Op::Column { x, index, cols }))
    }

    /// Stacks `K` vectors of shape `[N]` into `[N, K]`.
    pub fn stack_columns(&mut self, columns: &[Var]) -> Result<Var> {
        let n = match columns.first() {
            Some(&c) => self.shape(c).to_vec(),
            None => return Err(shape_err("stack_columns", "no inputs".into())),
        };
        if n.len() != 1 || columns.iter().any(|&c| self.shape(c) != n.as_slice()) {
            return Err(shape_err("stack_columns", format!("column shape {n:?}")));
        }
        let (rows, k) = (n[0], columns.len());
        let mut out = vec![0.0; rows * k];
        for (j, &c) in columns.iter().enumerate() {
            for (i, v) in self.value(c).data().iter().enumerate() {
                out[i * k + j] = *v;
            }
        }
        let value = Tensor::new(vec![rows, k], out)?;
        Ok(self.push(value, Op::StackColumns(columns.to_vec())))
    }

    /// Bilinear crop of `x [N, C, H, W]` at each request's lattice, giving `[R, C * S]`.
    pub fn roi_align(&mut self, x: Var, rois: &[RoiRequest]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("roi_align", format!("{xs:?}")));
        }
        let samples = rois.first().map_or(0, |r| r.points.len());
        let (c, h, w) = (xs[1], xs[2], xs[3]);
        let mut taps = Vec::with_capacity(rois.len() * samples);
        for r in rois {
            if r.batch >= xs[0] || r.points.len() != samples {
                return Err(shape_err(
                    "roi_align",
                    format!("roi batch {} with {} points", r.batch, r.points.len()),
                ));
            }
            for &(u, v) in &r.points {
                if !u.is_finite() || !v.is_finite() {
                    return Err(shape_err("roi_align", format!("non-finite sample ({u}, {v})")));
                }
                taps.push((r.batch, bilinear_taps(h, w, u, v)));
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; rois.len() * c * samples];
        for (ri, chunk) in taps.chunks(samples.max(1)).enumerate() {
            for ch in 0..c {
                for (s, (n, t)) in chunk.iter().enumerate() {
                    let plane = &src[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                    out[(ri * c + ch) * samples + s] = t.iter().map(|&(i, wt)| plane[i] * wt).sum();
                }
            }
        }
        let value = Tensor::new(vec![rois.len(), c * samples], out)?;
        Ok(self.push(value, Op::Roi { x, taps, samples }))
    }

    /// Picks flat elements of `x` into a `[len]` vector.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(shape_err("gather", format!("index {bad} out of {len}")));
        }
        let src = self.value(x).data();
        let data = indices.iter().map(|&i| src[i]).collect();
        Ok(self.push(
            Tensor::from_vec(data),
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let cols = *xs.last().ok_or_else(|| shape_err("log_softmax", "scalar input".into()))?;
        if cols == 0 {
            return Err(shape_err("log_softmax", format!("{xs:?}")));
        }
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(Tensor::new(xs, out)?, Op::LogSoftmax { x, cols }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Reverse pass from a scalar `loss`. Parameters not reached get zero gradient.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::NoTape);
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let gyd = gy.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if id.index() >= out.len() {
                        return Err(NnError::Checkpoint(format!(
                            "graph references parameter {} outside the store",
                            id.index()
                        )));
                    }
                    out.get_mut(*id).add_assign(&gy);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let xs = self.shape(*x);
                    let n = xs[0];
                    let o = self.shape(*w)[0];
                    let rows = geom.rows();
                    let p = geom.out_pixels();
                    let plane = geom.channels * geom.height * geom.width;
                    let wv = self.value(*w).data();
                    let mut dw = vec![0.0; o * rows];
                    let mut db = vec![0.0; o];
                    let mut dx = vec![0.0; n * plane];
                    let xv = self.value(*x).data();
                    // Columns are rebuilt per image rather than kept from the forward pass.
                    let direct = geom.is_pointwise();
                    let mut cols = if direct { Vec::new() } else { vec![0.0; rows * p] };
                    let mut dcols = if direct { Vec::new() } else { vec![0.0; rows * p] };
                    for i in 0..n {
                        let dy = &gyd[i * o * p..(i + 1) * o * p];
                        let xi = &xv[i * plane..(i + 1) * plane];
                        for (oc, chunk) in dy.chunks(p).enumerate() {
                            db[oc] += chunk.iter().sum::<f64>();
                        }
                        let dxi = &mut dx[i * plane..(i + 1) * plane];
                        if direct {
                            gemm(o, p, rows, 1.0, dy, p, 1, xi, 1, p, 1.0, &mut dw, rows, 1);
                            gemm(rows, o, p, 1.0, wv, 1, rows, dy, p, 1, 0.0, dxi, p, 1);
                        } else {
                            im2col(xi, geom, &mut cols);
                            gemm(o, p, rows, 1.0, dy, p, 1, &cols, 1, p, 1.0, &mut dw, rows, 1);
                            gemm(rows, o, p, 1.0, wv, 1, rows, dy, p, 1, 0.0, &mut dcols, p, 1);
                            col2im(&dcols, geom, dxi);
                        }
                    }
                    accumulate(&mut grads, *x, xs, dx);
                    accumulate(&mut grads, *w, self.shape(*w), dw);
                    accumulate(&mut grads, *b, self.shape(*b), db);
                }
                Op::Linear { x, w, b } => {
                    let xs = self.shape(*x);
                    let (n, i) = (xs[0], xs[1]);
                    let o = self.shape(*w)[0];
                    let mut dw = vec![0.0; o * i];
                    gemm(o, n, i, 1.0, gyd, 1, o, self.value(*x).data(), i, 1, 0.0, &mut dw, i, 1);
                    let mut dx = vec![0.0; n * i];
                    gemm(n, o, i, 1.0, gyd, o, 1, self.value(*w).data(), i, 1, 0.0, &mut dx, i, 1);
                    let mut db = vec![0.0; o];
                    for row in gyd.chunks(o) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *x, xs, dx);
                    accumulate(&mut grads, *w, self.shape(*w), dw);
                    accumulate(&mut grads, *b, self.shape(*b), db);
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let d = gyd.iter().zip(y).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, node.value.shape(), d);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let d = gyd.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect();
                    accumulate(&mut grads, *x, node.value.shape(), d);
                }
                Op::Sin(x) => {
                    let xv = self.value(*x).data();
                    let d = gyd.iter().zip(xv).map(|(g, v)| g * v.cos()).collect();
                    accumulate(&mut grads, *x, node.value.shape(), d);
                }
                Op::Cos(x) => {
                    let xv = self.value(*x).data();
                    let d = gyd.iter().zip(xv).map(|(g, v)| -g * v.sin()).collect();
                    accumulate(&mut grads, *x, node.value.shape(), d);
                }
                Op::Square(x) => {
                    let xv = self.value(*x).data();
                    let d = gyd.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect();
                    accumulate(&mut grads, *x, node.value.shape(), d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, node.value.shape(), gyd.to_vec());
                    accumulate(&mut grads, *b, node.value.shape(), gyd.to_vec());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, node.value.shape(), gyd.to_vec());
                    accumulate(&mut grads, *b, node.value.shape(), gyd.iter().map(|g| -g).collect());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = gyd.iter().zip(bv).map(|(g, v)| g * v).collect();
                    let db = gyd.iter().zip(av).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads, *a, node.value.shape(), da);
                    accumulate(&mut grads, *b, node.value.shape(), db);
                }
                Op::Scale(x, f) => {
                    accumulate(&mut grads, *x, node.value.shape(), gyd.iter().map(|g| g * f).collect());
                }
                Op::Offset(x) | Op::WrapAngle(x) => {
                    accumulate(&mut grads, *x, node.value.shape(), gyd.to_vec());
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x).data();
                    let d = gyd
                        .iter()
                        .zip(xv)
                        .map(|(g, v)| if v >= lo && v <= hi { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, node.value.shape(), d);
                }
                Op::Upsample2x(x) => {
                    let xs = self.shape(*x);
                    let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
                    let mut d = vec![0.0; planes * h * w];
                    for p in 0..planes {
                        let src = &gyd[p * 4 * h * w..(p + 1) * 4 * h * w];
                        let dst = &mut d[p * h * w..(p + 1) * h * w];
                        for r in 0..2 * h {
                            for c in 0..2 * w {
                                dst[(r / 2) * w + c / 2] += src[r * 2 * w + c];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, xs, d);
                }
                Op::Concat { inputs, inner } => {
                    let total: usize = inner.iter().sum();
                    let n = node.value.shape()[0];
                    let mut offset = 0;
                    for (&v, &len) in inputs.iter().zip(inner) {
                        let mut d = Vec::with_capacity(n * len);
                        for i in 0..n {
                            d.extend_from_slice(&gyd[i * total + offset..i * total + offset + len]);
                        }
                        accumulate(&mut grads, v, self.shape(v), d);
                        offset += len;
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let xs = self.shape(*x);
                    let hw = xs[2] * xs[3];
                    let mut d = Vec::with_capacity(self.value(*x).len());
                    for g in gyd {
                        d.extend(std::iter::repeat_n(g / hw as f64, hw));
                    }
                    accumulate(&mut grads, *x, xs, d);
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, *x, self.shape(*x), gyd.to_vec());
                }
                Op::Column { x, index, cols } => {
                    let xs = self.shape(*x);
                    let mut d = vec![0.0; xs[0] * cols];
                    for (i, g) in gyd.iter().enumerate() {
                        d[i * cols + index] = *g;
                    }
                    accumulate(&mut grads, *x, xs, d);
                }
                Op::StackColumns(columns) => {
                    let k = columns.len();
                    for (j, &c) in columns.iter().enumerate() {
                        let d = gyd.iter().skip(j).step_by(k).copied().collect();
                        accumulate(&mut grads, c, self.shape(c), d);
                    }
                }
                Op::Roi { x, taps, samples } => {
                    let xs = self.shape(*x);
                    let (c, h, w) = (xs[1], xs[2], xs[3]);
                    let mut d = vec![0.0; self.value(*x).len()];
                    for (ri, chunk) in taps.chunks((*samples).max(1)).enumerate() {
                        for ch in 0..c {
                            for (s, (n, t)) in chunk.iter().enumerate() {
                                let g = gyd[(ri * c + ch) * samples + s];
                                let base = (n * c + ch) * h * w;
                                for &(i, wt) in t {
                                    d[base + i] += g * wt;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, xs, d);
                }
                Op::Gather { x, indices } => {
                    let mut d = vec![0.0; self.value(*x).len()];
                    for (g, &i) in gyd.iter().zip(indices) {
                        d[i] += g;
                    }
                    accumulate(&mut grads, *x, self.shape(*x), d);
                }
                Op::LogSoftmax { x, cols } => {
                    let y = node.value.data();
                    let mut d = vec![0.0; y.len()];
                    for ((drow, grow), yrow) in
                        d.chunks_mut(*cols).zip(gyd.chunks(*cols)).zip(y.chunks(*cols))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for ((dv, g), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv = g - yv.exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *x, node.value.shape(), d);
                }
                Op::Sum(x) => {
                    let g = gyd[0];
                    accumulate(&mut grads, *x, self.shape(*x), vec![g; self.value(*x).len()]);
                }
                Op::Mean(x) => {
                    let len = self.value(*x).len().max(1);
                    let g = gyd[0] / len as f64;
                    accumulate(&mut grads, *x, self.shape(*x), vec![g; self.value(*x).len()]);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        for k in -20..20 {
            let a = k as f64 * 0.77;
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert_eq!(wrap_angle(w), w);
        }
    }

    #[test]
    fn sum_of_params_has_unit_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_vec(vec![1.0, -2.0, 3.0])).unwrap();
        let b = store.add("b", Tensor::full(&[2, 2], 0.5)).unwrap();
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let bv = g.param(&store, b);
        let sa = g.sum(av);
        let sb = g.sum(bv);
        let loss = g.add(sa, sb).unwrap();
        let grads = g.backward(loss, &store).unwrap();
        assert!(grads.get(a).data().iter().all(|&v| v == 1.0));
        assert!(grads.get(b).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0)).unwrap();
        let b = store.add("b", Tensor::scalar(5.0)).unwrap();
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let _bv = g.param(&store, b);
        let loss = g.square(av);
        let grads = g.backward(loss, &store).unwrap();
        assert_eq!(grads.get(a).item(), 4.0);
        assert_eq!(grads.get(b).item(), 0.0);
    }

    #[test]
    fn backward_on_foreign_var_is_error() {
        let store = ParamStore::new();
        let mut other = Graph::new();
        let x = other.constant(&[1], 1.0);
        let y = other.square(x);
        let empty = Graph::new();
        assert!(matches!(empty.backward(y, &store), Err(NnError::NoTape)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let x = g.constant(&[3], 1.0);
        assert!(matches!(g.backward(x, &store), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(&[3], 1.0);
        let b = g.constant(&[2], 1.0);
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
    }

    #[test]
    fn bilinear_taps_weights_sum_to_one() {
        for &(u, v) in &[(0.0, 0.0), (2.5, 1.25), (-3.0, 9.0), (3.999, 0.001)] {
            let t = bilinear_taps(5, 4, u, v);
            let s: f64 = t.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
