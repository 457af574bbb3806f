//! Domain types for ingested score dumps.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One answer candidate proposed by the reader for one document.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AnswerCandidate {
    /// Answer span text or veracity label.
    pub key: String,
    pub reader_logit: f64,
    pub correct: bool,
}

/// One retrieved document with its reader candidates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DocumentCandidate {
    pub doc_id: String,
    pub retriever_score: f64,
    /// Distant-supervision relevance label; absent labels read as `false`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub relevant: bool,
    pub answers: Vec<AnswerCandidate>,
}

/// One query with its candidate pool.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CalibrationExample {
    pub query_id: String,
    /// Number of documents the reader consumes.
    pub k: usize,
    /// Candidate pool, sorted by retriever score descending.
    pub pool: Vec<DocumentCandidate>,
}

/// Identity of an answer for deduplication: the lowercased key.
pub fn answer_identity(key: &str) -> String {
    key.to_lowercase()
}

impl CalibrationExample {
    /// Validates the example and sorts its pool by retriever score.
    pub fn new(
        query_id: impl Into<String>,
        k: usize,
        pool: Vec<DocumentCandidate>,
    ) -> Result<Self> {
        let mut ex = Self {
            query_id: query_id.into(),
            k,
            pool,
        };
        ex.normalize()?;
        Ok(ex)
    }

    /// Checks every invariant and restores the pool ordering in place.
    pub fn normalize(&mut self) -> Result<()> {
        let bad = |reason: String| Error::InvalidExample {
            query_id: self.query_id.clone(),
            reason,
        };
        if self.pool.is_empty() {
            return Err(bad("empty pool".to_string()));
        }
        if self.k == 0 {
            return Err(bad("k must be positive".to_string()));
        }
        if self.k > self.pool.len() {
            return Err(Error::KExceedsPool {
                query_id: self.query_id.clone(),
                k: self.k,
                pool: self.pool.len(),
            });
        }
        let mut ids = BTreeSet::new();
        for doc in &self.pool {
            if !doc.retriever_score.is_finite() {
                return Err(bad(format!(
                    "non-finite retriever score for {}",
                    doc.doc_id
                )));
            }
            if !ids.insert(doc.doc_id.as_str()) {
                return Err(bad(format!("duplicate doc id {}", doc.doc_id)));
            }
            if doc.answers.is_empty() {
                return Err(bad(format!("document {} has no answers", doc.doc_id)));
            }
            for a in &doc.answers {
                if a.key.is_empty() {
                    return Err(bad(format!("empty answer key in {}", doc.doc_id)));
                }
                if !a.reader_logit.is_finite() {
                    return Err(bad(format!("non-finite reader logit in {}", doc.doc_id)));
                }
            }
        }
        // Stable: equal scores keep their ingestion order.
        self.pool
            .sort_by(|a, b| b.retriever_score.total_cmp(&a.retriever_score));
        Ok(())
    }

    pub fn retriever_scores(&self) -> Vec<f64> {
        self.pool.iter().map(|d| d.retriever_score).collect()
    }

    pub fn has_correct_candidate(&self) -> bool {
        self.pool
            .iter()
            .any(|d| d.answers.iter().any(|a| a.correct))
    }

    pub fn has_relevant_document(&self) -> bool {
        self.pool.iter().any(|d| d.relevant)
    }

    /// Whether some occurrence of the answer (by identity) is labelled correct.
    pub fn is_correct(&self, answer_key: &str) -> bool {
        let id = answer_identity(answer_key);
        self.pool
            .iter()
            .flat_map(|d| d.answers.iter())
            .any(|a| a.correct && answer_identity(&a.key) == id)
    }

    pub fn contains_answer(&self, answer_key: &str) -> bool {
        let id = answer_identity(answer_key);
        self.pool
            .iter()
            .flat_map(|d| d.answers.iter())
            .any(|a| answer_identity(&a.key) == id)
    }

    /// Copy restricted to the `limit` best-scored documents (and `k` clipped).
    pub fn truncated(&self, limit: usize) -> Self {
        let limit = limit.max(1).min(self.pool.len());
        Self {
            query_id: self.query_id.clone(),
            k: self.k.min(limit),
            pool: self.pool[..limit].to_vec(),
        }
    }
}

/// Dataset split names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Calib,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Calib => "calib",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calib" => Ok(Split::Calib),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<CalibrationExample>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate query ids.
    pub fn new(examples: Vec<CalibrationExample>, split: Split) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for ex in &examples {
            if !seen.insert(ex.query_id.as_str()) {
                return Err(Error::DuplicateQueryId(ex.query_id.clone()));
            }
        }
        Ok(Self { examples, split })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Copy with every pool truncated to `limit` documents.
    pub fn truncated(&self, limit: usize) -> Self {
        Self {
            examples: self.examples.iter().map(|e| e.truncated(limit)).collect(),
            split: self.split,
        }
    }
}

/// Splits examples in order into calib/valid/test with sizes
/// `n/2`, `n/4` and the remainder.
pub fn split_calib_valid_test(examples: Vec<CalibrationExample>) -> Result<[Dataset; 3]> {
    let n = examples.len();
    let n_calib = n / 2;
    let n_valid = n / 4;
    let mut rest = examples;
    let test = rest.split_off(n_calib + n_valid);
    let valid = rest.split_off(n_calib);
    Ok([
        Dataset::new(rest, Split::Calib)?,
        Dataset::new(valid, Split::Valid)?,
        Dataset::new(test, Split::Test)?,
    ])
}

/// A predicted answer with its confidence and correctness.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prediction {
    pub query_id: String,
    pub answer_key: String,
    pub confidence: f64,
    pub correct: bool,
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    pub fn answer(key: &str, logit: f64, correct: bool) -> AnswerCandidate {
        AnswerCandidate {
            key: key.into(),
            reader_logit: logit,
            correct,
        }
    }

    pub fn doc(
        id: &str,
        score: f64,
        relevant: bool,
        answers: Vec<AnswerCandidate>,
    ) -> DocumentCandidate {
        DocumentCandidate {
            doc_id: id.into(),
            retriever_score: score,
            relevant,
            answers,
        }
    }

    pub fn single_doc_example(id: &str, logits: &[f64], correct: usize) -> CalibrationExample {
        let answers = logits
            .iter()
            .enumerate()
            .map(|(j, &l)| answer(&format!("a{j}"), l, j == correct))
            .collect();
        CalibrationExample::new(id, 1, vec![doc("d0", 0.0, true, answers)]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use alloc::vec;

    #[test]
    fn pool_sorted_on_construction() {
        let ex = CalibrationExample::new(
            "q",
            1,
            vec![
                doc("low", 1.0, false, vec![answer("x", 0.0, false)]),
                doc("high", 3.0, true, vec![answer("y", 0.0, true)]),
            ],
        )
        .unwrap();
        assert_eq!(ex.pool[0].doc_id, "high");
        assert_eq!(ex.pool[1].doc_id, "low");
    }

    #[test]
    fn k_exceeding_pool_is_rejected() {
        let pool = (0..3)
            .map(|i| {
                doc(
                    &format!("d{i}"),
                    i as f64,
                    false,
                    vec![answer("a", 0.0, false)],
                )
            })
            .collect();
        assert!(matches!(
            CalibrationExample::new("q", 5, pool),
            Err(Error::KExceedsPool { k: 5, pool: 3, .. })
        ));
    }

    #[test]
    fn invalid_examples() {
        let no_answers = CalibrationExample::new("q", 1, vec![doc("d", 0.0, false, vec![])]);
        assert!(no_answers.is_err());
        let dup = CalibrationExample::new(
            "q",
            1,
            vec![
                doc("d", 0.0, false, vec![answer("a", 0.0, false)]),
                doc("d", 1.0, false, vec![answer("a", 0.0, false)]),
            ],
        );
        assert!(dup.is_err());
        let nan = CalibrationExample::new(
            "q",
            1,
            vec![doc("d", f64::NAN, false, vec![answer("a", 0.0, false)])],
        );
        assert!(nan.is_err());
        let empty_key = CalibrationExample::new(
            "q",
            1,
            vec![doc("d", 0.0, false, vec![answer("", 0.0, false)])],
        );
        assert!(empty_key.is_err());
    }

    #[test]
    fn duplicate_query_ids_rejected() {
        let a = single_doc_example("q", &[0.0], 0);
        assert_eq!(
            Dataset::new(vec![a.clone(), a], Split::Calib),
            Err(Error::DuplicateQueryId("q".into()))
        );
        assert!(Dataset::new(vec![], Split::Test).unwrap().is_empty());
    }

    #[test]
    fn split_sizes() {
        let exs: Vec<_> = (0..1000)
            .map(|i| single_doc_example(&format!("q{i}"), &[0.0], 0))
            .collect();
        let [c, v, t] = split_calib_valid_test(exs).unwrap();
        assert_eq!((c.len(), v.len(), t.len()), (500, 250, 250));
        assert_eq!(t.split, Split::Test);
    }

    #[test]
    fn correctness_uses_lowercased_identity() {
        let ex = CalibrationExample::new(
            "q",
            1,
            vec![doc("d", 0.0, true, vec![answer("England", 1.0, true)])],
        )
        .unwrap();
        assert!(ex.is_correct("england"));
        assert!(ex.contains_answer("ENGLAND"));
    }
}
