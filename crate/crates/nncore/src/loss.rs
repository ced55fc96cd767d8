//! Training objectives: spatial cross-entropy over a goal grid, the masked
//! residual regression read at the target cell, and trajectory L2.

use crate::{Graph, NnError, Result, Tensor, Var};

/// Mean over the batch of `-log softmax(logits[n])[targets[n]]` for `logits [N, cells]`.
pub fn spatial_cross_entropy(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(NnError::Shape {
            op: "spatial_cross_entropy",
            detail: format!("logits {shape:?} for {} targets", targets.len()),
        });
    }
    let cells = shape[1];
    let logp = g.log_softmax(logits)?;
    let idx: Vec<usize> = targets
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            if t >= cells {
                Err(NnError::Shape {
                    op: "spatial_cross_entropy",
                    detail: format!("target cell {t} outside {cells} cells"),
                })
            } else {
                Ok(n * cells + t)
            }
        })
        .collect::<Result<_>>()?;
    let picked = g.gather(logp, &idx)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// Residual target at one grid cell: `(dx, dy, heading)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualTarget {
    pub cell: usize,
    pub dx: f64,
    pub dy: f64,
    pub heading: f64,
}

/// Squared error of channels 1-3 of `map [N, 4, H, W]`, read only at each
/// sample's target cell; the heading term uses the wrapped difference.
/// Summed over the three channels, averaged over the batch.
pub fn masked_residual_loss(g: &mut Graph, map: Var, targets: &[ResidualTarget]) -> Result<Var> {
    let shape = g.shape(map).to_vec();
    if shape.len() != 4 || shape[1] < 4 || shape[0] != targets.len() {
        return Err(NnError::Shape {
            op: "masked_residual_loss",
            detail: format!("map {shape:?} for {} targets", targets.len()),
        });
    }
    let cells = shape[2] * shape[3];
    let ch = shape[1];
    let mut pick = |channel: usize| -> Result<Var> {
        let idx: Vec<usize> = targets
            .iter()
            .enumerate()
            .map(|(n, t)| (n * ch + channel) * cells + t.cell)
            .collect();
        if targets.iter().any(|t| t.cell >= cells) {
            return Err(NnError::Shape {
                op: "masked_residual_loss",
                detail: format!("target cell outside {cells} cells"),
            });
        }
        g.gather(map, &idx)
    };
    let px = pick(1)?;
    let py = pick(2)?;
    let ph = pick(3)?;
    let tx = g.input(Tensor::from_vec(targets.iter().map(|t| t.dx).collect()));
    let ty = g.input(Tensor::from_vec(targets.iter().map(|t| t.dy).collect()));
    let th = g.input(Tensor::from_vec(targets.iter().map(|t| t.heading).collect()));
    let ex = g.sub(px, tx)?;
    let ey = g.sub(py, ty)?;
    let eh = g.sub(ph, th)?;
    let eh = g.wrap_angle(eh);
    let sx = g.square(ex);
    let sy = g.square(ey);
    let sh = g.square(eh);
    let s = g.add(sx, sy)?;
    let s = g.add(s, sh)?;
    Ok(g.mean(s))
}

/// Per-step predicted poses of a batch, each component shaped `[N]`.
#[derive(Clone, Debug, Default)]
pub struct TrajVars {
    pub x: Vec<Var>,
    pub y: Vec<Var>,
    pub heading: Vec<Var>,
}

impl TrajVars {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Reference poses `[N, H]` per component.
#[derive(Clone, Debug)]
pub struct TrajTarget {
    pub x: Tensor,
    pub y: Tensor,
    pub heading: Tensor,
}

/// Mean over steps and batch of squared position error plus squared wrapped heading error.
pub fn l2_traj_loss(g: &mut Graph, pred: &TrajVars, target: &TrajTarget) -> Result<Var> {
    let steps = pred.len();
    let shape = target.x.shape().to_vec();
    if steps == 0 || shape.len() != 2 || shape[1] != steps || pred.y.len() != steps || pred.heading.len() != steps
    {
        return Err(NnError::Shape {
            op: "l2_traj_loss",
            detail: format!("{steps} predicted steps against reference {shape:?}"),
        });
    }
    let n = shape[0];
    let column = |t: &Tensor, k: usize| -> Tensor {
        Tensor::from_vec((0..n).map(|i| t.data()[i * steps + k]).collect())
    };
    let mut terms = Vec::with_capacity(steps);
    for k in 0..steps {
        let rx = g.input(column(&target.x, k));
        let ry = g.input(column(&target.y, k));
        let rh = g.input(column(&target.heading, k));
        let ex = g.sub(pred.x[k], rx)?;
        let ey = g.sub(pred.y[k], ry)?;
        let eh = g.sub(pred.heading[k], rh)?;
        let eh = g.wrap_angle(eh);
        let sx = g.square(ex);
        let sy = g.square(ey);
        let sh = g.square(eh);
        let s = g.add(sx, sy)?;
        terms.push(g.add(s, sh)?);
    }
    let all = g.stack_columns(&terms)?;
    Ok(g.mean(all))
}
