//! Central finite-difference gradient checker, independent of the backward pass.

use rand::seq::index::sample;
use rand::Rng;

use crate::{Graph, ParamId, ParamStore, Result, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter name, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from dividing by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / denom
}

/// Compares backward gradients with central differences on `samples`
/// randomly chosen scalar parameters.
pub fn check_gradients<F>(
    store: &ParamStore,
    mut loss_fn: F,
    samples: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    let (g, loss) = loss_fn(store)?;
    let grads = g.backward(loss, store)?;
    drop(g);

    let mut flat: Vec<(ParamId, usize)> = Vec::new();
    for id in store.ids() {
        for k in 0..store.get(id).len() {
            flat.push((id, k));
        }
    }
    let picks = sample(rng, flat.len(), samples.min(flat.len()));
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for i in picks {
        let (id, k) = flat[i];
        let orig = store.get(id).data()[k];
        probe.get_mut(id).data_mut()[k] = orig + eps;
        let (gp, lp) = loss_fn(&probe)?;
        let plus = gp.value(lp).item();
        probe.get_mut(id).data_mut()[k] = orig - eps;
        let (gm, lm) = loss_fn(&probe)?;
        let minus = gm.value(lm).item();
        probe.get_mut(id).data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(id).data()[k];
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((store.name(id).to_string(), k, analytic, numeric));
        }
    }
    Ok(report)
}
