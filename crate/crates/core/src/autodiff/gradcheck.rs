//! Numerical gradient verification by central finite differences.
//!
//! Runs in `f64`: the default step of `1e-4` puts the truncation error around
//! `1e-8` for unit-scale functions, far below the acceptance threshold.

use super::graph::{Graph, TensorId};
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Builds a fresh graph over the given parameters and returns the scalar
/// output to differentiate.
pub type BuildFn<'a> = dyn Fn(&ParamSet<f64>) -> Result<(Graph<f64>, TensorId)> + 'a;

/// Central-difference step used throughout the test suites.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Relative error with a small floor so near-zero gradients are compared
/// absolutely: `|a - b| / max(|a|, |b|, 1e-3)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(1e-3))
}

/// Outcome of one gradient check: number of coordinates compared and the
/// worst relative error observed.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub coords: usize,
    pub max_rel_err: f64,
}

/// Compare analytic gradients against central finite differences for every
/// coordinate of every parameter. `build` must be a pure function of the
/// parameter values.
pub fn gradient_check(build: &BuildFn, params: &ParamSet<f64>, h: f64) -> Result<GradCheckReport> {
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, tensor)| (0..tensor.numel()).map(move |i| (name.clone(), i)))
        .collect();
    gradient_check_at(build, params, h, &coords)
}

/// Like [`gradient_check`] but differences only the named coordinates.
/// Keeps large models checkable: analytic gradients are still computed for
/// everything, only the finite differencing is sampled.
pub fn gradient_check_at(
    build: &BuildFn,
    params: &ParamSet<f64>,
    h: f64,
    coords: &[(String, usize)],
) -> Result<GradCheckReport> {
    let (mut graph, loss) = build(params)?;
    let loss_value = graph.scalar(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { context: "gradient check loss".to_string() });
    }
    let analytic = graph.backward(loss)?;

    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let (g, l) = build(p)?;
        Ok(g.scalar(l))
    };

    let mut report = GradCheckReport { coords: 0, max_rel_err: 0.0 };
    for (name, i) in coords {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::contract(format!("no analytic gradient for {name}")))?;
        let mut plus = params.clone();
        plus.get_mut(name)?.data[*i] += h;
        let mut minus = params.clone();
        minus.get_mut(name)?.data[*i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let err = relative_error(grad[*i], numeric);
        report.coords += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
        }
    }
    Ok(report)
}
