//! Temperature and Platt scaling of logit vectors.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// `softmax(logits / tau)`.
pub fn temp_scale(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || tau.is_nan() {
        return Err(Error::invalid("temperature must be positive"));
    }
    platt_scale(logits, 1.0 / tau, 0.0)
}

/// `softmax(a * logits + b)`.
pub fn platt_scale(logits: &[f64], a: f64, b: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("affine parameters"));
    }
    Ok(math::softmax_affine(logits, a, b))
}
