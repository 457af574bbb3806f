//! Two-layer temperature predictor.
//!
//! The network maps a standardized feature vector through one hidden layer to
//! two output units `u1, u2`; each inverse temperature is
//! `inv_temp_scale * logistic(u)`. With the default scale of 1 both
//! temperatures are strictly greater than 1.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grad::{Expr, Graph};
use crate::math;
use crate::rng::RngState;

/// Hidden layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Weights of an `F -> H -> 2` network plus input standardization.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpParams {
    pub n_inputs: usize,
    pub hidden: usize,
    /// Row-major `hidden x n_inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `2 x hidden`; row 0 drives `t1`, row 1 drives `t2`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub activation: Activation,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub inv_temp_scale: f64,
}

impl MlpParams {
    /// All-zero network with identity standardization.
    pub fn zeros(n_inputs: usize, hidden: usize) -> Self {
        Self {
            n_inputs,
            hidden,
            w1: vec![0.0; hidden * n_inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: vec![0.0; 2],
            activation: Activation::Tanh,
            input_mean: vec![0.0; n_inputs],
            input_scale: vec![1.0; n_inputs],
            inv_temp_scale: 1.0,
        }
    }

    /// Network with Gaussian weights of standard deviation `std` and zero biases.
    pub fn random(n_inputs: usize, hidden: usize, std: f64, rng: &mut RngState) -> Self {
        let mut p = Self::zeros(n_inputs, hidden);
        for w in p.w1.iter_mut().chain(p.w2.iter_mut()) {
            *w = rng.normal(0.0, std);
        }
        p
    }

    pub fn n_weights(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Trainable weights flattened as `[w1, b1, w2, b2]`.
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_weights());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn set_weights(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_weights() {
            return Err(Error::DimensionMismatch {
                expected: self.n_weights(),
                got: flat.len(),
            });
        }
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
        Ok(())
    }

    /// Flat indices of the weights feeding output unit `head` (0 or 1).
    pub fn head_indices(&self, head: usize) -> Vec<usize> {
        let base = self.w1.len() + self.b1.len();
        let mut idx: Vec<usize> = (0..self.hidden)
            .map(|h| base + head * self.hidden + h)
            .collect();
        idx.push(base + self.w2.len() + head);
        idx
    }

    /// Sets the standardization statistics from training rows.
    pub fn fit_standardization(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::Empty("standardization rows"));
        }
        let n = rows.len() as f64;
        for f in 0..self.n_inputs {
            let mut sum = 0.0;
            for r in rows {
                if r.len() != self.n_inputs {
                    return Err(Error::DimensionMismatch {
                        expected: self.n_inputs,
                        got: r.len(),
                    });
                }
                sum += r[f];
            }
            let mean = sum / n;
            let var = rows
                .iter()
                .map(|r| (r[f] - mean) * (r[f] - mean))
                .sum::<f64>()
                / n;
            let sd = libm::sqrt(var);
            self.input_mean[f] = mean;
            self.input_scale[f] = if sd > 1e-12 { sd } else { 1.0 };
        }
        Ok(())
    }

    pub fn standardize(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.n_inputs {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs,
                got: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.weights().iter().all(|v| v.is_finite())
            && self.input_mean.iter().all(|v| v.is_finite())
            && self.input_scale.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.inv_temp_scale.is_finite()
            && self.inv_temp_scale > 0.0
    }

    fn activate(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Output pre-activations `(u1, u2)` for already standardized inputs.
    pub fn outputs(&self, z: &[f64]) -> Result<[f64; 2]> {
        if z.len() != self.n_inputs {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs,
                got: z.len(),
            });
        }
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.n_inputs..(h + 1) * self.n_inputs];
                let pre = self.b1[h] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
                self.activate(pre)
            })
            .collect();
        let mut u = [0.0; 2];
        for (o, slot) in u.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            *slot = self.b2[o] + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>();
        }
        Ok(u)
    }
}

/// Predicted `(t1, t2)` for a raw (unstandardized) feature vector.
pub fn mlp_temperatures(features: &[f64], params: &MlpParams) -> Result<(f64, f64)> {
    let z = params.standardize(features)?;
    let [u1, u2] = params.outputs(&z)?;
    let s = params.inv_temp_scale;
    Ok((1.0 / (s * math::sigmoid(u1)), 1.0 / (s * math::sigmoid(u2))))
}

/// Graph version returning the two inverse temperatures. `weights` are the
/// flattened trainable weights in [`MlpParams::weights`] order and `z` the
/// standardized inputs.
pub fn mlp_inverse_temperatures_graph(
    g: &mut Graph,
    shape: &MlpParams,
    weights: &[Expr],
    z: &[f64],
) -> Result<[Expr; 2]> {
    if weights.len() != shape.n_weights() {
        return Err(Error::DimensionMismatch {
            expected: shape.n_weights(),
            got: weights.len(),
        });
    }
    if z.len() != shape.n_inputs {
        return Err(Error::DimensionMismatch {
            expected: shape.n_inputs,
            got: z.len(),
        });
    }
    let (f, h_n) = (shape.n_inputs, shape.hidden);
    let (w1, rest) = weights.split_at(h_n * f);
    let (b1, rest) = rest.split_at(h_n);
    let (w2, b2) = rest.split_at(2 * h_n);
    let hidden: Vec<Expr> = (0..h_n)
        .map(|h| {
            let mut acc = b1[h];
            for (i, &x) in z.iter().enumerate() {
                if x != 0.0 {
                    let t = g.mul_const(w1[h * f + i], x);
                    acc = g.add(acc, t);
                }
            }
            match shape.activation {
                Activation::Tanh => g.tanh(acc),
                Activation::Relu => g.max_const(acc, 0.0),
            }
        })
        .collect();
    let mut out = [b2[0], b2[1]];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut acc = b2[o];
        for (h, &a) in hidden.iter().enumerate() {
            let t = g.mul(w2[o * h_n + h], a);
            acc = g.add(acc, t);
        }
        let s = g.logistic(acc);
        *slot = g.mul_const(s, shape.inv_temp_scale);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_gives_temperature_two() {
        let p = MlpParams::zeros(4, 16);
        let (t1, t2) = mlp_temperatures(&[1.0, -2.0, 3.0, 0.5], &p).unwrap();
        assert_eq!((t1, t2), (2.0, 2.0));
    }

    #[test]
    fn saturated_output_gives_temperature_one() {
        let mut p = MlpParams::zeros(3, 4);
        p.b2 = vec![50.0, 50.0];
        let (t1, t2) = mlp_temperatures(&[0.0; 3], &p).unwrap();
        assert!((t1 - 1.0).abs() < 1e-9 && (t2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn temperatures_exceed_one() {
        let mut rng = RngState::new(3);
        for _ in 0..50 {
            let p = MlpParams::random(5, 8, 2.0, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.normal(0.0, 3.0)).collect();
            let (t1, t2) = mlp_temperatures(&x, &p).unwrap();
            assert!(t1 >= 1.0 && t2 >= 1.0);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = MlpParams::zeros(3, 2);
        assert!(matches!(
            mlp_temperatures(&[1.0], &p),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn graph_matches_forward_pass() {
        let mut rng = RngState::new(11);
        for activation in [Activation::Tanh, Activation::Relu] {
            let mut p = MlpParams::random(6, 5, 0.7, &mut rng);
            p.activation = activation;
            p.b1.iter_mut().for_each(|b| *b = rng.normal(0.0, 0.5));
            p.inv_temp_scale = 2.0;
            let z: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
            let mut g = Graph::new();
            let w: Vec<Expr> = p.weights().iter().map(|&v| g.param(v)).collect();
            let [i1, i2] = mlp_inverse_temperatures_graph(&mut g, &p, &w, &z).unwrap();
            let [u1, u2] = p.outputs(&z).unwrap();
            assert!((g.value(i1) - 2.0 * math::sigmoid(u1)).abs() < 1e-12);
            assert!((g.value(i2) - 2.0 * math::sigmoid(u2)).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_round_trip_and_heads() {
        let mut rng = RngState::new(5);
        let p = MlpParams::random(3, 4, 1.0, &mut rng);
        let mut q = MlpParams::zeros(3, 4);
        q.set_weights(&p.weights()).unwrap();
        assert_eq!(p.weights(), q.weights());
        let h0 = p.head_indices(0);
        let h1 = p.head_indices(1);
        assert_eq!(h0.len(), 5);
        assert!(h0.iter().all(|i| !h1.contains(i)));
        assert_eq!(*h1.last().unwrap(), p.n_weights() - 1);
    }

    #[test]
    fn standardization_statistics() {
        let mut p = MlpParams::zeros(2, 1);
        p.fit_standardization(&[vec![1.0, 5.0], vec![3.0, 5.0]])
            .unwrap();
        assert_eq!(p.input_mean, vec![2.0, 5.0]);
        assert_eq!(p.input_scale, vec![1.0, 1.0]);
        assert_eq!(p.standardize(&[3.0, 6.0]).unwrap(), vec![1.0, 1.0]);
    }
}
