//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Real;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Errors are relative to the finite-difference estimate, with
    /// denominator `max(|numeric|, abs_floor)`.
    pub abs_floor: f64,
}

impl GradCheckOptions {
    pub fn f64_default() -> Self {
        GradCheckOptions { eps: 1e-5, tolerance: 1e-6, abs_floor: 1e-4 }
    }

    pub fn f32_default() -> Self {
        GradCheckOptions { eps: 1e-2, tolerance: 1e-3, abs_floor: 1e-2 }
    }
}

#[derive(Debug, Clone)]
pub struct Worst {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Worst>,
    pub coords_checked: usize,
    /// Set when a non-finite value was met; names the offending coordinate.
    pub non_finite: Option<String>,
    pub passed: bool,
}

fn eval<F: Real>(
    f: &impl Fn(&ParamStore<F>, &mut Graph<F>) -> Result<Var>,
    params: &ParamStore<F>,
) -> Result<f64> {
    let mut g = Graph::new();
    let out = f(params, &mut g)?;
    Ok(g.value(out).item().to_f64().unwrap())
}

/// Compare backward gradients of the scalar `model_fn` against central
/// differences on every coordinate of `check` (all parameters when empty).
pub fn grad_check<F: Real>(
    model_fn: impl Fn(&ParamStore<F>, &mut Graph<F>) -> Result<Var>,
    params: &mut ParamStore<F>,
    check: &[ParamId],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let out = model_fn(params, &mut g)?;
    g.backward(out)?;
    let mut analytic = Gradients::zeros_like(params);
    analytic.accumulate(&g);
    drop(g);
    compare_gradients(model_fn, params, &analytic, check, opts)
}

/// Finite-difference comparison against externally supplied gradients.
pub fn compare_gradients<F: Real>(
    model_fn: impl Fn(&ParamStore<F>, &mut Graph<F>) -> Result<Var>,
    params: &mut ParamStore<F>,
    analytic: &Gradients<F>,
    check: &[ParamId],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let ids: Vec<ParamId> = if check.is_empty() { params.ids().collect() } else { check.to_vec() };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
        non_finite: None,
        passed: true,
    };
    for id in ids {
        for c in 0..params.value(id).len() {
            let orig = params.value(id).data()[c];
            params.value_mut(id).data_mut()[c] = orig + F::of(opts.eps);
            let plus = eval(&model_fn, params);
            params.value_mut(id).data_mut()[c] = orig - F::of(opts.eps);
            let minus = eval(&model_fn, params);
            params.value_mut(id).data_mut()[c] = orig;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.get(id)[c].to_f64().unwrap();
            report.coords_checked += 1;
            if !numeric.is_finite() || !a.is_finite() {
                report.non_finite = Some(format!("{}[{c}]: analytic={a} numeric={numeric}", params.name(id)));
                report.passed = false;
                report.max_rel_err = f64::INFINITY;
                return Ok(report);
            }
            let denom = numeric.abs().max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some(Worst { param: params.name(id).to_string(), coord: c, analytic: a, numeric });
            }
        }
    }
    report.passed = report.max_rel_err < opts.tolerance;
    Ok(report)
}
