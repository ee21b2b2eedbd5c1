//! Central-difference gradient verification.

use super::params::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over checked entries of `|a − n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Max over parameters of `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-8)` taken over
    /// the checked entries of each parameter. Unlike the elementwise figure
    /// it stays meaningful when single entries cancel to near zero.
    pub max_tensor_rel_error: f64,
    pub worst_tensor: Option<String>,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central differences for every entry
/// of every parameter.
///
/// `objective` returns the scalar loss and its analytic gradient for the
/// given parameters; it must be deterministic.
pub fn grad_check<F>(objective: F, params: &Params, epsilon: f64) -> Result<GradCheckReport>
where
    F: FnMut(&Params) -> Result<(f64, Params)>,
{
    grad_check_strided(objective, params, epsilon, usize::MAX)
}

/// Like [`grad_check`] but checks at most `max_per_param` evenly spaced
/// entries of each parameter.
pub fn grad_check_strided<F>(
    mut objective: F,
    params: &Params,
    epsilon: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    F: FnMut(&Params) -> Result<(f64, Params)>,
{
    let (loss, analytic) = objective(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        max_tensor_rel_error: 0.0,
        worst_tensor: None,
        max_abs_error: 0.0,
        checked: 0,
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).map_or(0, |a| a.len());
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        let grad = analytic.require(&name)?.clone();
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for i in (0..n).step_by(stride) {
            let orig = params.get(&name).expect("present").data()[i];
            probe.get_mut(&name).expect("present").data_mut()[i] = orig + epsilon;
            let (plus, _) = objective(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig - epsilon;
            let (minus, _) = objective(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
        let tensor_rel = diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(1e-8);
        if tensor_rel > report.max_tensor_rel_error {
            report.max_tensor_rel_error = tensor_rel;
            report.worst_tensor = Some(name.clone());
        }
    }
    Ok(report)
}
