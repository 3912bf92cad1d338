//! Central finite-difference gradient checks.
//!
//! Relative error is `|analytic − numeric| / max(1, |analytic|, |numeric|)`,
//! which degrades to absolute error for gradients below one in magnitude.

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compare the gradient of the scalar built by `f` with respect to every
/// element of every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let x0 = t.data()[e];
            work[ti].data_mut()[e] = x0 + step;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = x0 - step;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = x0;
            let numeric = (up - down) / (2.0 * step);
            report.max_rel_error = report.max_rel_error.max(rel_error(analytic[ti][e], numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Same check for model parameters held in a store. `positions` lists the
/// (parameter, flat element) pairs to probe; `None` probes every element.
pub fn check_params<F>(
    store: &ParamStore,
    positions: Option<&[(ParamId, usize)]>,
    step: f64,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, &work)?;
    g.backward(out)?;
    g.accumulate_into(&mut work);
    let analytic = work.clone();

    let all: Vec<(ParamId, usize)>;
    let positions = match positions {
        Some(p) => p,
        None => {
            all = store.ids().flat_map(|id| (0..store.get(id).numel()).map(move |e| (id, e))).collect();
            &all
        }
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out).data()[0])
    };

    let mut report = GradCheck::default();
    for &(id, e) in positions {
        let x0 = store.get(id).data()[e];
        work.get_mut(id).data_mut()[e] = x0 + step;
        let up = eval(&work)?;
        work.get_mut(id).data_mut()[e] = x0 - step;
        let down = eval(&work)?;
        work.get_mut(id).data_mut()[e] = x0;
        let numeric = (up - down) / (2.0 * step);
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic.grad(id)[e], numeric));
        report.checked += 1;
    }
    Ok(report)
}
