//! Central finite differences against tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Where the largest disagreement was found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub parameter: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients of a scalar loss with central differences.
///
/// `build` records the loss on a fresh tape given one parameter handle per
/// entry of `params` (registered with ids `0..params.len()`). It must be
/// deterministic. Tapes containing BGN nodes are rejected: their gradients
/// are deliberately not derivatives of the loss.
pub fn finite_difference_check<F>(params: &[Tensor], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    finite_difference_report(params, step, build).map(|r| r.max_relative_error)
}

pub fn finite_difference_report<F>(params: &[Tensor], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Usage(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |values: &[Tensor]| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, t)| tape.parameter(i, t.clone()))
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, loss))
    };

    let (tape, loss) = eval(params)?;
    if tape.contains_bgn() {
        return Err(Error::Usage(
            "finite-difference check is undefined on tapes with BGN nodes".into(),
        ));
    }
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        parameter: 0,
        element: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        let analytic = grads
            .param(p)
            .ok_or_else(|| Error::Usage(format!("no gradient for parameter {p}")))?
            .clone();
        for e in 0..params[p].len() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + step;
            let (t_plus, l_plus) = eval(&work)?;
            let plus = t_plus.value(l_plus)?.item()?;
            work[p].data_mut()[e] = orig - step;
            let (t_minus, l_minus) = eval(&work)?;
            let minus = t_minus.value(l_minus)?.item()?;
            work[p].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[e];
            let err = relative_error(a, numeric);
            if err > report.max_relative_error || err.is_nan() {
                report = GradCheckReport {
                    max_relative_error: err,
                    parameter: p,
                    element: e,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
