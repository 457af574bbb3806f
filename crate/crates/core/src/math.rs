//! Plain floating point helpers shared by the non-differentiable paths.

use alloc::vec::Vec;

/// Probability floor used before taking logs in likelihoods.
pub const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Max-stabilised softmax of `scale * x + shift`.
pub fn softmax_affine(x: &[f64], scale: f64, shift: f64) -> Vec<f64> {
    let z: Vec<f64> = x.iter().map(|&v| scale * v + shift).collect();
    softmax(&z)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = max_of(z);
    let mut out: Vec<f64> = z.iter().map(|&v| exp(v - m)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = max_of(z);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ln(z.iter().map(|&v| exp(v - m)).sum::<f64>())
}
