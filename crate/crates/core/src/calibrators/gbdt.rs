//! Gradient boosted regression trees under logistic loss.
//!
//! Trees are grown level by level on the residuals `y - p`. Split search scans
//! every feature in a presorted order once per level, so a round costs
//! `O(n * F * depth)`. Leaves take the Newton value `sum r / sum p(1 - p)`.
//!
//! Training never lets the log-loss go up: a tree whose shrunken update would
//! raise the training loss has its leaves halved until it does not, and is
//! dropped (ending training) if no halving helps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Probability clamp applied to every prediction.
pub const PROB_CLAMP: f64 = 1e-6;
const NEWTON_FLOOR: f64 = 1e-12;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid("learning rate must lie in (0, 1]"));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Regression tree stored as a node arena rooted at index 0.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let TreeNode::Leaf { value } = n {
                *value *= factor;
            }
        }
    }

    /// Features referenced by any split.
    pub fn used_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TreeEnsemble {
    pub n_features: usize,
    pub prior_logit: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl TreeEnsemble {
    pub fn prior_only(n_features: usize, prior_logit: f64, learning_rate: f64) -> Self {
        Self {
            n_features,
            prior_logit,
            learning_rate,
            trees: Vec::new(),
        }
    }

    /// Raw score `prior + lr * sum(tree outputs)`.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let trees: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(self.prior_logit + self.learning_rate * trees)
    }
}

/// Correctness probability predicted by the ensemble.
pub fn gbdt_predict(ensemble: &TreeEnsemble, features: &[f64]) -> Result<f64> {
    Ok(clamp_prob(math::sigmoid(ensemble.margin(features)?)))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn log_loss(margins: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            let p = clamp_prob(math::sigmoid(m));
            if y {
                -math::ln(p)
            } else {
                -math::ln(1.0 - p)
            }
        })
        .sum();
    total / margins.len() as f64
}

/// A trained ensemble together with its per-round training log-loss;
/// `losses[0]` is the loss of the prior alone.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtReport {
    pub ensemble: TreeEnsemble,
    pub losses: Vec<f64>,
}

/// Trains an ensemble; see [`gbdt_train_report`] for the loss trace.
pub fn gbdt_train(
    features: &[Vec<f64>],
    labels: &[bool],
    config: &GbdtConfig,
) -> Result<TreeEnsemble> {
    gbdt_train_report(features, labels, config).map(|r| r.ensemble)
}

pub fn gbdt_train_report(
    features: &[Vec<f64>],
    labels: &[bool],
    config: &GbdtConfig,
) -> Result<GbdtReport> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::Empty("training rows"));
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let n_features = features[0].len();
    for row in features {
        if row.len() != n_features {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training features"));
        }
    }
    let n = features.len();
    let positives = labels.iter().filter(|&&y| y).count();
    let p_bar = (positives as f64 / n as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let prior_logit = math::ln(p_bar / (1.0 - p_bar));
    let mut ensemble = TreeEnsemble::prior_only(n_features, prior_logit, config.learning_rate);
    let mut margins = vec![prior_logit; n];
    let mut losses = vec![log_loss(&margins, labels)];
    if positives == 0 || positives == n {
        return Ok(GbdtReport { ensemble, losses });
    }

    let grower = Grower::new(features, config);
    for _ in 0..config.rounds {
        let probs: Vec<f64> = margins.iter().map(|&m| math::sigmoid(m)).collect();
        let residuals: Vec<f64> = probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| if y { 1.0 - p } else { -p })
            .collect();
        let hessians: Vec<f64> = probs.iter().map(|&p| p * (1.0 - p)).collect();
        let mut tree = grower.grow(&residuals, &hessians);
        let outputs: Vec<f64> = features.iter().map(|x| tree.predict(x)).collect();

        let previous = *losses.last().unwrap_or(&f64::INFINITY);
        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = margins
                .iter()
                .zip(&outputs)
                .map(|(&m, &o)| m + config.learning_rate * factor * o)
                .collect();
            let loss = log_loss(&trial, labels);
            if loss <= previous {
                accepted = Some((trial, loss));
                break;
            }
            factor *= 0.5;
        }
        let Some((trial, loss)) = accepted else { break };
        if factor != 1.0 {
            tree.scale_leaves(factor);
        }
        margins = trial;
        losses.push(loss);
        ensemble.trees.push(tree);
    }
    Ok(GbdtReport { ensemble, losses })
}

struct Grower<'a> {
    features: &'a [Vec<f64>],
    /// Row indices sorted by each feature.
    order: Vec<Vec<usize>>,
    config: &'a GbdtConfig,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Grower<'a> {
    fn new(features: &'a [Vec<f64>], config: &'a GbdtConfig) -> Self {
        let n_features = features[0].len();
        let order = (0..n_features)
            .map(|f| {
                let mut idx: Vec<usize> = (0..features.len()).collect();
                idx.sort_by(|&a, &b| features[a][f].total_cmp(&features[b][f]));
                idx
            })
            .collect();
        Self {
            features,
            order,
            config,
        }
    }

    fn grow(&self, residuals: &[f64], hessians: &[f64]) -> RegressionTree {
        let n = residuals.len();
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        let mut node_of = vec![0usize; n];
        let mut frontier = vec![0usize];
        for _ in 0..self.config.max_depth {
            if frontier.is_empty() {
                break;
            }
            let best = self.best_splits(&frontier, &node_of, residuals);
            let mut next = Vec::new();
            let mut remap = vec![None; nodes.len()];
            for (slot, &node) in frontier.iter().enumerate() {
                if let Some(c) = best[slot] {
                    let left = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes[node] = TreeNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    remap[node] = Some(c);
                    next.push(left);
                    next.push(left + 1);
                }
            }
            for (row, slot) in node_of.iter_mut().enumerate() {
                let node = *slot;
                if let Some(c) = remap.get(node).copied().flatten() {
                    let TreeNode::Split { left, right, .. } = nodes[node] else {
                        unreachable!()
                    };
                    *slot = if self.features[row][c.feature] < c.threshold {
                        left
                    } else {
                        right
                    };
                }
            }
            frontier = next;
        }
        let mut num = vec![0.0; nodes.len()];
        let mut den = vec![0.0; nodes.len()];
        for row in 0..n {
            let leaf = node_of[row];
            num[leaf] += residuals[row];
            den[leaf] += hessians[row];
        }
        for (i, node) in nodes.iter_mut().enumerate() {
            if let TreeNode::Leaf { value } = node {
                *value = num[i] / den[i].max(NEWTON_FLOOR);
            }
        }
        RegressionTree { nodes }
    }

    /// Best squared-error split for every frontier node, if any is admissible.
    fn best_splits(
        &self,
        frontier: &[usize],
        node_of: &[usize],
        residuals: &[f64],
    ) -> Vec<Option<Candidate>> {
        let max_node = frontier.iter().copied().max().unwrap_or(0);
        let mut slot_of = vec![usize::MAX; max_node + 1];
        for (s, &node) in frontier.iter().enumerate() {
            slot_of[node] = s;
        }
        let slot = |row: usize| -> Option<usize> {
            let node = node_of[row];
            (node <= max_node && slot_of[node] != usize::MAX).then(|| slot_of[node])
        };
        let m = frontier.len();
        let mut total_sum = vec![0.0; m];
        let mut total_cnt = vec![0usize; m];
        for (row, &r) in residuals.iter().enumerate() {
            if let Some(s) = slot(row) {
                total_sum[s] += r;
                total_cnt[s] += 1;
            }
        }
        let min_leaf = self.config.min_leaf;
        let mut best: Vec<Option<Candidate>> = vec![None; m];
        let mut left_sum = vec![0.0; m];
        let mut left_cnt = vec![0usize; m];
        let mut last_value = vec![f64::NAN; m];
        for (f, order) in self.order.iter().enumerate() {
            left_sum.iter_mut().for_each(|v| *v = 0.0);
            left_cnt.iter_mut().for_each(|v| *v = 0);
            last_value.iter_mut().for_each(|v| *v = f64::NAN);
            for &row in order {
                let Some(s) = slot(row) else { continue };
                let x = self.features[row][f];
                let (nl, nr) = (left_cnt[s], total_cnt[s] - left_cnt[s]);
                if nl >= min_leaf && nr >= min_leaf && x > last_value[s] {
                    let (sl, st) = (left_sum[s], total_sum[s]);
                    let sr = st - sl;
                    let gain =
                        sl * sl / nl as f64 + sr * sr / nr as f64 - st * st / (nl + nr) as f64;
                    if gain > 1e-15 && best[s].is_none_or(|b| gain > b.gain) {
                        best[s] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold: 0.5 * (last_value[s] + x),
                        });
                    }
                }
                left_sum[s] += residuals[row];
                left_cnt[s] += 1;
                last_value[s] = x;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn degenerate_labels_give_prior_only() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let e = gbdt_train(&x, &[true, true, true], &GbdtConfig::default()).unwrap();
        assert!(e.trees.is_empty());
        assert!(gbdt_predict(&e, &[5.0]).unwrap() >= 1.0 - 1e-6 - 1e-15);
        let e = gbdt_train(&x, &[false; 3], &GbdtConfig::default()).unwrap();
        assert!(gbdt_predict(&e, &[5.0]).unwrap() <= 1e-6 + 1e-15);
    }

    #[test]
    fn prior_only_predictions() {
        let e = TreeEnsemble::prior_only(2, 0.0, 0.1);
        assert_eq!(gbdt_predict(&e, &[1.0, 2.0]).unwrap(), 0.5);
        let e = TreeEnsemble::prior_only(1, math::ln(3.0), 0.1);
        assert!((gbdt_predict(&e, &[0.0]).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn separable_one_dimensional_problem() {
        let x: Vec<Vec<f64>> = (-20..20).map(|i| vec![i as f64 + 0.5]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.0).collect();
        let cfg = GbdtConfig {
            rounds: 50,
            max_depth: 1,
            learning_rate: 0.3,
            min_leaf: 1,
        };
        let report = gbdt_train_report(&x, &y, &cfg).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(r, &l)| (gbdt_predict(&report.ensemble, r).unwrap() > 0.5) == l)
            .count();
        assert_eq!(acc, x.len());
        assert!(*report.losses.last().unwrap() < 0.05);
        assert!(report.ensemble.trees.iter().all(|t| t.depth() <= 1));
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = RngState::new(17);
        for lr in [0.05, 0.1, 0.3, 1.0] {
            let x: Vec<Vec<f64>> = (0..200)
                .map(|_| (0..3).map(|_| rng.standard_normal()).collect())
                .collect();
            let y: Vec<bool> = x
                .iter()
                .map(|r| rng.bernoulli(math::sigmoid(2.0 * r[0] - r[1] * r[2])))
                .collect();
            let cfg = GbdtConfig {
                rounds: 60,
                max_depth: 3,
                learning_rate: lr,
                min_leaf: 3,
            };
            let r = gbdt_train_report(&x, &y, &cfg).unwrap();
            assert!(r.losses.windows(2).all(|w| w[1] <= w[0]));
            assert!(r.ensemble.trees.iter().all(|t| t.depth() <= 3));
        }
    }

    #[test]
    fn unused_features_do_not_matter() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<bool> = (0..40).map(|i| i % 3 == 0 || i > 30).collect();
        let e = gbdt_train(&x, &y, &GbdtConfig::default()).unwrap();
        assert!(e.trees.iter().all(|t| t.used_features().all(|f| f == 0)));
        let a = gbdt_predict(&e, &[12.0, 0.0]).unwrap();
        let b = gbdt_predict(&e, &[12.0, 1e6]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            gbdt_train(&[], &[], &GbdtConfig::default()),
            Err(Error::Empty(_))
        ));
        let e = TreeEnsemble::prior_only(2, 0.0, 0.1);
        assert!(gbdt_predict(&e, &[1.0]).is_err());
        let bad = GbdtConfig {
            learning_rate: 0.0,
            ..GbdtConfig::default()
        };
        assert!(gbdt_train(&[vec![0.0]], &[true], &bad).is_err());
    }
}
