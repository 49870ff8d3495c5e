//! Error metrics and credible bands.

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::factors::GaussianFactor;

/// `‖u − u_s‖_∞ / ‖u_s‖_∞`.
pub fn relative_error_linf(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate vs truth",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let scale = truth.amax();
    if scale == 0.0 {
        return Err(invalid("truth is identically zero"));
    }
    Ok((estimate - truth).amax() / scale)
}

/// Pointwise `mean ∓ factor·std`.
pub fn credible_band(u: &GaussianFactor, factor: f64) -> (DVector<f64>, DVector<f64>) {
    band_from_moments(u.mean(), &u.pointwise_std(), factor)
}

pub fn band_from_moments(mean: &DVector<f64>, std: &DVector<f64>, factor: f64) -> (DVector<f64>, DVector<f64>) {
    (mean - std * factor, mean + std * factor)
}

/// Fraction of entries with `lower ≤ truth ≤ upper`.
pub fn band_coverage(truth: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<f64> {
    if truth.len() != lower.len() || truth.len() != upper.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "credible band",
            expected: truth.len(),
            got: lower.len(),
        });
    }
    let inside = truth
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count();
    Ok(inside as f64 / truth.len() as f64)
}
