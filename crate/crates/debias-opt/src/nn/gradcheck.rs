//! Central-difference gradient oracle.

use crate::error::{Error, Result};

/// Compare an analytic gradient against central finite differences of `f`
/// at `point`; returns the maximum over coordinates of
/// `|analytic - central| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, analytic_grad: &[f64], point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic_grad.len() != point.len() {
        return Err(Error::shape("gradient and point length mismatch"));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at perturbed coordinate {i}"
            )));
        }
        let central = (plus - minus) / (2.0 * h);
        let rel = (analytic_grad[i] - central).abs() / (analytic_grad[i].abs() + 1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
