//! Gumbel-top-k subset sampling and its successive-softmax relaxation.
//!
//! Hard sampling perturbs every score once with i.i.d. Gumbel(0, 1) noise and
//! takes the k largest perturbed scores, which draws an ordered k-subset from
//! the Plackett-Luce distribution of the scores ([`plackett_luce_prob`]).
//!
//! The relaxation keeps the same single noise draw and replaces the k
//! successive argmaxes by softmaxes at temperature `T`:
//!
//! ```text
//! s(1)   = scores + noise
//! d(j)   = softmax(s(j) / T)
//! s(j+1) = s(j) + log(max(1 - d(j), 1e-20))
//! gates  = d(1) + ... + d(k)
//! ```
//!
//! The gates sum to k and approach the k-hot indicator of the hard selection
//! as `T -> 0`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grad::{Expr, Graph};
use crate::math;
use crate::rng::RngState;

/// Floor applied to `1 - d` before the log in the relaxation recursion.
pub const ONE_MINUS_GATE_FLOOR: f64 = 1e-20;

/// One Gumbel(0, 1) draw, `-log(-log(U))` with `U` uniform on (0, 1).
pub fn sample_gumbel(rng: &mut RngState) -> f64 {
    -math::ln(-math::ln(rng.uniform_open()))
}

/// `n` independent Gumbel(0, 1) draws.
pub fn gumbel_noise(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| sample_gumbel(rng)).collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::invalid(alloc::format!(
            "k = {k} out of range for {n} scores"
        )));
    }
    Ok(())
}

fn check_finite(scores: &[f64]) -> Result<()> {
    if scores.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("score"))
    }
}

/// Ordered Gumbel-top-k sample of indices.
pub fn hard_topk(scores: &[f64], k: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    check_k(k, scores.len())?;
    check_finite(scores)?;
    let noise = gumbel_noise(rng, scores.len());
    hard_topk_with_noise(scores, &noise, k)
}

/// Top-k of `scores + noise`, ties broken by the lower index.
pub fn hard_topk_with_noise(scores: &[f64], noise: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, scores.len())?;
    if noise.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: noise.len(),
        });
    }
    let perturbed: Vec<f64> = scores.iter().zip(noise).map(|(s, n)| s + n).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        perturbed[b]
            .partial_cmp(&perturbed[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Probability of drawing `ordering` (as an ordered prefix) under
/// Plackett-Luce sampling without replacement with weights `exp(scores)`.
pub fn plackett_luce_prob(scores: &[f64], ordering: &[usize]) -> Result<f64> {
    check_finite(scores)?;
    let mut seen = alloc::vec![false; scores.len()];
    for &i in ordering {
        if i >= scores.len() || seen[i] {
            return Err(Error::invalid("ordering must hold distinct valid indices"));
        }
        seen[i] = true;
    }
    let m = math::max_of(scores);
    let weights: Vec<f64> = scores.iter().map(|&s| math::exp(s - m)).collect();
    let mut remaining: f64 = weights.iter().sum();
    let mut prob = 1.0;
    for &i in ordering {
        prob *= weights[i] / remaining;
        remaining -= weights[i];
    }
    Ok(prob)
}

/// Relaxed k-hot document selection.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector {
    /// One gate per pool document, `gates[i] = sum_j per_step[j][i]`.
    pub gates: Vec<f64>,
    /// The k successive softmax vectors.
    pub per_step: Vec<Vec<f64>>,
    pub relaxation_temperature: f64,
}

impl GateVector {
    pub fn k(&self) -> usize {
        self.per_step.len()
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("relaxation temperature must be positive"))
    }
}

/// Successive-softmax relaxation with a fresh noise draw.
pub fn relaxed_topk(
    scores: &[f64],
    k: usize,
    temperature: f64,
    rng: &mut RngState,
) -> Result<GateVector> {
    check_k(k, scores.len())?;
    let noise = gumbel_noise(rng, scores.len());
    relaxed_topk_with_noise(scores, &noise, k, temperature)
}

/// Successive-softmax relaxation for a fixed noise realisation.
pub fn relaxed_topk_with_noise(
    scores: &[f64],
    noise: &[f64],
    k: usize,
    temperature: f64,
) -> Result<GateVector> {
    check_k(k, scores.len())?;
    check_temperature(temperature)?;
    check_finite(scores)?;
    if noise.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: noise.len(),
        });
    }
    let mut running: Vec<f64> = scores.iter().zip(noise).map(|(s, n)| s + n).collect();
    let mut gates = alloc::vec![0.0; scores.len()];
    let mut per_step = Vec::with_capacity(k);
    for step in 0..k {
        let d = math::softmax_affine(&running, 1.0 / temperature, 0.0);
        for (g, &di) in gates.iter_mut().zip(&d) {
            *g += di;
        }
        if step + 1 < k {
            for (s, &di) in running.iter_mut().zip(&d) {
                *s += math::ln((1.0 - di).max(ONE_MINUS_GATE_FLOOR));
            }
        }
        per_step.push(d);
    }
    Ok(GateVector {
        gates,
        per_step,
        relaxation_temperature: temperature,
    })
}

/// Relaxed gates built on a differentiation graph.
#[derive(Debug, Clone)]
pub struct RelaxedGates {
    pub gates: Vec<Expr>,
    pub per_step: Vec<Vec<Expr>>,
}

/// Graph version of [`relaxed_topk_with_noise`]; `scores` may depend on
/// parameters, the noise is a constant.
pub fn relaxed_topk_graph(
    g: &mut Graph,
    scores: &[Expr],
    noise: &[f64],
    k: usize,
    temperature: f64,
) -> Result<RelaxedGates> {
    check_k(k, scores.len())?;
    check_temperature(temperature)?;
    if noise.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: noise.len(),
        });
    }
    let inv_t = 1.0 / temperature;
    let mut running: Vec<Expr> = scores
        .iter()
        .zip(noise)
        .map(|(&s, &n)| g.add_const(s, n))
        .collect();
    let mut per_step: Vec<Vec<Expr>> = Vec::with_capacity(k);
    for step in 0..k {
        let scaled: Vec<Expr> = running.iter().map(|&s| g.mul_const(s, inv_t)).collect();
        let d = g.softmax(&scaled);
        if step + 1 < k {
            running = running
                .iter()
                .zip(&d)
                .map(|(&s, &di)| {
                    let nd = g.neg(di);
                    let one_minus = g.add_const(nd, 1.0);
                    let floored = g.max_const(one_minus, ONE_MINUS_GATE_FLOOR);
                    let l = g.log(floored);
                    g.add(s, l)
                })
                .collect();
        }
        per_step.push(d);
    }
    let gates = (0..scores.len())
        .map(|i| {
            let terms: Vec<Expr> = per_step.iter().map(|d| d[i]).collect();
            g.sum(&terms)
        })
        .collect();
    Ok(RelaxedGates { gates, per_step })
}

/// Linear annealing of the relaxation temperature from `t_start` to `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnnealSchedule {
    pub t_start: f64,
    pub t_end: f64,
    pub total_steps: usize,
}

impl AnnealSchedule {
    pub fn new(t_start: f64, t_end: f64, total_steps: usize) -> Result<Self> {
        let s = Self {
            t_start,
            t_end,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_start >= self.t_end && self.t_start.is_finite()) {
            return Err(Error::invalid("anneal schedule needs t_start >= t_end > 0"));
        }
        if self.total_steps == 0 {
            return Err(Error::invalid("anneal schedule needs at least one step"));
        }
        Ok(())
    }

    /// Temperature after `step` of `total_steps`.
    pub fn anneal(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid(alloc::format!(
                "anneal step {step} beyond {} steps",
                self.total_steps
            )));
        }
        Ok(self.t_start + (self.t_end - self.t_start) * step as f64 / self.total_steps as f64)
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t_start: 5.0,
            t_end: 0.2,
            total_steps: 100,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn full_selection_is_a_permutation() {
        let mut rng = RngState::new(1);
        let mut sel = hard_topk(&[0.3, -1.0, 2.0, 0.0], 4, &mut rng).unwrap();
        sel.sort_unstable();
        assert_eq!(sel, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_break_by_lower_index() {
        assert_eq!(
            hard_topk_with_noise(&[1.0, 1.0, 1.0], &[0.0; 3], 2).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn k_out_of_range() {
        let mut rng = RngState::new(1);
        assert!(hard_topk(&[1.0, 2.0], 3, &mut rng).is_err());
        assert!(hard_topk(&[1.0, 2.0], 0, &mut rng).is_err());
        assert!(relaxed_topk(&[1.0], 2, 1.0, &mut rng).is_err());
    }

    #[test]
    fn plackett_luce_examples() {
        let s = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
        assert!((plackett_luce_prob(&s, &[0, 1]).unwrap() - 0.30).abs() < 1e-12);
        let sm = math::softmax(&s);
        assert!((plackett_luce_prob(&s, &[2]).unwrap() - sm[2]).abs() < 1e-15);
        assert!(plackett_luce_prob(&s, &[1, 1]).is_err());
        assert!(plackett_luce_prob(&s, &[3]).is_err());
    }

    #[test]
    fn plackett_luce_survives_large_scores() {
        let p = plackett_luce_prob(&[1000.0, 999.0], &[0]).unwrap();
        assert!((p - math::sigmoid(1.0)).abs() < 1e-12);
    }

    #[test]
    fn relaxation_rejects_bad_temperature() {
        assert!(relaxed_topk_with_noise(&[0.0, 1.0], &[0.0, 0.0], 1, 0.0).is_err());
        assert!(relaxed_topk_with_noise(&[0.0, 1.0], &[0.0, 0.0], 1, -1.0).is_err());
        assert!(relaxed_topk_with_noise(&[0.0, f64::NAN], &[0.0, 0.0], 1, 1.0).is_err());
    }

    #[test]
    fn graph_relaxation_matches_plain() {
        let scores = [0.4, -0.2, 1.3, 0.9, -1.0];
        let noise = [0.1, 0.7, -0.3, 0.2, 1.1];
        let plain = relaxed_topk_with_noise(&scores, &noise, 3, 0.7).unwrap();
        let mut g = Graph::new();
        let s: Vec<Expr> = scores.iter().map(|&v| g.param(v)).collect();
        let r = relaxed_topk_graph(&mut g, &s, &noise, 3, 0.7).unwrap();
        for (e, v) in r.gates.iter().zip(&plain.gates) {
            assert!((g.value(*e) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn anneal_endpoints_and_midpoint() {
        let s = AnnealSchedule::new(5.0, 1.0, 4).unwrap();
        assert_eq!(s.anneal(0).unwrap(), 5.0);
        assert_eq!(s.anneal(4).unwrap(), 1.0);
        assert_eq!(s.anneal(2).unwrap(), 3.0);
        assert!(s.anneal(5).is_err());
        assert!(AnnealSchedule::new(1.0, 2.0, 4).is_err());
        assert!(AnnealSchedule::new(1.0, 0.0, 4).is_err());
    }
}
