//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Outcome of a finite-difference sweep over a set of named parameters.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error over all compared coordinates.
    pub max_rel_err: f64,
    /// `(parameter name, flat coordinate)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Number of coordinates compared (those above the magnitude floor).
    pub coords_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Compares reverse-mode gradients against central differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)`, coordinate by coordinate.
///
/// `build` must be a deterministic scalar-valued computation over the leaves it
/// receives (dropout disabled, no hidden state). Coordinates where both
/// gradients are below `1e-6` in magnitude are skipped.
pub fn check_gradients<F>(
    named: &[(String, Tensor<f64>)],
    eps: f64,
    tol: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |params: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite loss in gradient check".into()));
        }
        Ok(v)
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = named.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::Numeric("non-finite loss in gradient check".into()));
    }
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(named)
        .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(t)))
        .collect();
    drop(tape);

    let mut params: Vec<Tensor<f64>> = named.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
        tol,
    };
    for pi in 0..params.len() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            params[pi].data_mut()[ci] = orig + eps;
            let fp = eval(&params)?;
            params[pi].data_mut()[ci] = orig - eps;
            let fm = eval(&params)?;
            params[pi].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let exact = analytic[pi].data()[ci];
            if !numeric.is_finite() || !exact.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {}[{}]",
                    named[pi].0, ci
                )));
            }
            let mag = exact.abs().max(numeric.abs());
            if mag <= 1e-6 {
                continue;
            }
            report.coords_checked += 1;
            let rel = (exact - numeric).abs() / mag;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((named[pi].0.clone(), ci));
            }
        }
    }
    Ok(report)
}
