//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Floor of the relative-error denominator `max(|a|, |b|, floor)`.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat coordinate)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Evaluate a scalar function built on a fresh graph with constant inputs.
pub fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Reverse-mode gradient of `f` with respect to each input.
pub fn analytic_gradient<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    Ok(vars
        .iter()
        .map(|&v| grads.take(v).expect("every parameter receives a gradient"))
        .collect())
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h`, one coordinate at a time.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut grad = vec![0.0; input.len()];
        for (j, slot) in grad.iter_mut().enumerate() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval_scalar(f, &work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval_scalar(f, &work)?;
            work[i].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("function value when perturbing input {i}"),
                    index: j,
                });
            }
            *slot = (plus - minus) / (2.0 * h);
        }
        grads.push(Tensor::from_parts(input.shape().to_vec(), grad));
    }
    Ok(grads)
}

/// Compare two gradient sets entry by entry.
pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor], tolerance: f64) -> Result<GradCheckReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::contract("gradient sets differ in length"));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance,
        passed: true,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if a.shape() != n.shape() {
            return Err(Error::shape("compare_gradients", a.shape(), n.shape()));
        }
        for (j, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("analytic gradient of input {i}"),
                    index: j,
                });
            }
            let err = relative_error(x, y);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

/// Check the reverse-mode gradient of scalar `f` against central finite
/// differences with step [`FD_STEP`].
pub fn grad_check<F>(f: F, inputs: &[Tensor], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    for (i, t) in inputs.iter().enumerate() {
        if let Some(j) = t.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("input {i}"),
                index: j,
            });
        }
    }
    let analytic = analytic_gradient(&f, inputs)?;
    let numeric = numeric_gradient(&f, inputs, FD_STEP)?;
    compare_gradients(&analytic, &numeric, tolerance)
}
