//! Finite-difference gradient checking.

use crate::error::Result;

use super::{ModelParams, Real, Tensor};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Checks analytic gradients of a deterministic scalar function against
/// central finite differences, coordinate by coordinate.
///
/// `loss` must evaluate the same function the analytic gradients were taken
/// from. The reported error is `|a - n| / max(1, |a|, |n|)`: the unit floor
/// keeps the metric meaningful where both gradients sit at roundoff level,
/// where a bare relative error is ill-conditioned.
pub fn gradient_check<R: Real>(
    loss: impl Fn(&ModelParams<R>) -> Result<f64>,
    params: &ModelParams<R>,
    analytic: &[Tensor<R>],
    eps: f64,
) -> Result<GradCheckReport> {
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for pi in 0..params.len() {
        for ci in 0..params.tensor(pi).len() {
            let orig = work.tensor(pi).data()[ci];
            work.tensor_mut(pi).data_mut()[ci] = orig + R::from_f64(eps);
            let f_plus = loss(&work)?;
            work.tensor_mut(pi).data_mut()[ci] = orig - R::from_f64(eps);
            let f_minus = loss(&work)?;
            work.tensor_mut(pi).data_mut()[ci] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi].data()[ci].as_f64();
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = params.name(pi).to_string();
                report.worst_coord = ci;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
