//! Candidate features and interest sets.
//!
//! Candidates are ranked by their uncalibrated occurrence confidence: the
//! product of the identity-temperature retriever posterior of a document and
//! the reader probability of the candidate in that document. An answer that
//! occurs in several documents is represented by its best occurrence.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{answer_identity, CalibrationExample};
use crate::error::{Error, Result};
use crate::math;

/// Which candidates may enter an interest set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RankingMode {
    /// Every candidate, ranked by its best occurrence confidence.
    #[default]
    TopPredictions,
    /// Only candidates that are the reader's argmax in at least one document.
    DocArgmax,
}

/// One member of an interest set.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestEntry {
    /// Lowercased answer identity.
    pub key: String,
    /// Uncalibrated confidence of the best occurrence.
    pub score: f64,
    pub features: Vec<f64>,
}

/// Ranked answer identities of one example.
pub(crate) struct Ranking {
    /// `(identity, best occurrence score, has a per-document argmax occurrence)`
    /// sorted by score descending, then identity.
    entries: Vec<(String, f64, bool)>,
}

impl Ranking {
    pub(crate) fn new(example: &CalibrationExample) -> Self {
        let posterior = math::softmax(&example.retriever_scores());
        let mut best: BTreeMap<String, (f64, bool)> = BTreeMap::new();
        for (doc, &w) in example.pool.iter().zip(&posterior) {
            let logits: Vec<f64> = doc.answers.iter().map(|a| a.reader_logit).collect();
            let probs = math::softmax(&logits);
            let argmax = first_argmax(&logits);
            for (j, a) in doc.answers.iter().enumerate() {
                let score = w * probs[j];
                let slot = best
                    .entry(answer_identity(&a.key))
                    .or_insert((f64::NEG_INFINITY, false));
                slot.0 = slot.0.max(score);
                slot.1 |= j == argmax;
            }
        }
        let mut entries: Vec<(String, f64, bool)> =
            best.into_iter().map(|(k, (s, top))| (k, s, top)).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { entries }
    }

    /// 1-based rank of an identity among all candidates.
    pub(crate) fn rank_of(&self, identity: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.0 == identity)
            .map(|p| p + 1)
    }

    pub(crate) fn top(&self, size: usize, mode: RankingMode) -> Vec<(&str, f64)> {
        self.entries
            .iter()
            .filter(|e| mode == RankingMode::TopPredictions || e.2)
            .take(size)
            .map(|e| (e.0.as_str(), e.1))
            .collect()
    }
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Features of a candidate with `example.k` slots; see [`featurize_with_width`].
pub fn featurize(example: &CalibrationExample, candidate: &str) -> Result<Vec<f64>> {
    featurize_with_width(example, candidate, example.k)
}

/// Fixed-length feature vector of length `2 * width + 2`:
/// the `width` best retriever scores, the candidate's best reader logit, the
/// candidate's per-document reader logits (descending), and its 1-based rank.
/// Missing slots are zero.
pub fn featurize_with_width(
    example: &CalibrationExample,
    candidate: &str,
    width: usize,
) -> Result<Vec<f64>> {
    let ranking = Ranking::new(example);
    featurize_ranked(example, &ranking, &answer_identity(candidate), width)
}

pub(crate) fn featurize_ranked(
    example: &CalibrationExample,
    ranking: &Ranking,
    identity: &str,
    width: usize,
) -> Result<Vec<f64>> {
    let rank = ranking
        .rank_of(identity)
        .ok_or_else(|| Error::UnknownCandidate(identity.into()))?;
    let mut out = Vec::with_capacity(2 * width + 2);
    out.extend(example.pool.iter().take(width).map(|d| d.retriever_score));
    out.resize(width, 0.0);

    let mut per_doc: Vec<f64> = example
        .pool
        .iter()
        .filter_map(|d| {
            d.answers
                .iter()
                .filter(|a| answer_identity(&a.key) == identity)
                .map(|a| a.reader_logit)
                .reduce(f64::max)
        })
        .collect();
    per_doc.sort_by(|a, b| b.total_cmp(a));
    out.push(per_doc[0]);
    out.extend(per_doc.iter().take(width));
    out.resize(2 * width + 1, 0.0);
    out.push(rank as f64);
    Ok(out)
}

/// Interest set with `example.k` feature slots.
pub fn build_interest_set(
    example: &CalibrationExample,
    size: usize,
    mode: RankingMode,
) -> Result<Vec<InterestEntry>> {
    build_interest_set_with_width(example, size, mode, example.k)
}

/// The `size` best candidates by uncalibrated confidence, one per answer
/// identity, each with its feature vector.
pub fn build_interest_set_with_width(
    example: &CalibrationExample,
    size: usize,
    mode: RankingMode,
    width: usize,
) -> Result<Vec<InterestEntry>> {
    if size == 0 {
        return Err(Error::invalid("interest set size must be positive"));
    }
    let ranking = Ranking::new(example);
    ranking
        .top(size, mode)
        .into_iter()
        .map(|(key, score)| {
            Ok(InterestEntry {
                key: key.into(),
                score,
                features: featurize_ranked(example, &ranking, key, width)?,
            })
        })
        .collect()
}

/// Input row of the temperature predictor: the features of the top-ranked candidate.
pub(crate) fn predictor_input(example: &CalibrationExample, width: usize) -> Result<Vec<f64>> {
    let ranking = Ranking::new(example);
    let (key, _) = ranking.top(1, RankingMode::TopPredictions)[0];
    featurize_ranked(example, &ranking, key, width)
}
