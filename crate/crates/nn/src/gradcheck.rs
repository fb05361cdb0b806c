//! Finite-difference verification of analytic gradients.

use crate::error::{NnError, Result};
use crate::graph::{Graph, Mode, Var};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares backprop gradients with central differences of step `h` for
/// every scalar of every parameter.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, floor)`; the
/// floor keeps entries whose true gradient is ~0 from dominating the report.
/// `loss_fn` is evaluated on an evaluation-mode graph and must be
/// deterministic.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    h: f64,
    floor: f64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    if h <= 0.0 || floor <= 0.0 {
        return Err(NnError::InvalidArgument("h and floor must be positive".into()));
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s, Mode::Eval);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item())
    };
    let analytic = {
        let mut g = Graph::new(store, Mode::Eval);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?.into_param_grads(store)
    };
    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.ids().collect();
    for (idx, id) in ids.into_iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for j in 0..store.value(id).numel() {
            let orig = work.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[idx][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(floor);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(GradCheckReport { params })
}
