//! Synthetic retriever-reader pipeline with exact ground truth.
//!
//! Each query has a latent relevant document `z` drawn uniformly from the
//! pool, or no relevant document at all with probability `p_unanswerable`.
//! Every document has a favored answer; in the relevant document that answer
//! is the gold one.
//!
//! * Retriever feature `x_i ~ N(ds * [i = z], 1)`; true logit `ds * x_i`.
//! * Reader feature `y_ij ~ N(s_i * [j = favored_i], 1)` where `s_i = dr` in
//!   the relevant document and `d_irr` elsewhere; true logit `dr * y_ij`.
//! * Reported logits are the true logits times the distortions `c1`, `c2`.
//!
//! By Bayes' rule the probability that candidate `j` of document `i` is
//! correct is `P(z = i | data) * softmax(dr * y_i)_j`, with
//!
//! ```text
//! P(z = i | data) = (1 - pu)/N * L_i / (pu + (1 - pu)/N * sum_l L_l)
//! L_i = exp(ds x_i - ds^2/2) * mean_j exp(dr y_ij - dr^2/2) / mean_j exp(d_irr y_ij - d_irr^2/2)
//! ```
//!
//! When `d_irr = dr` and `pu = 0` this is exactly the identity-temperature
//! posterior mixture, so an uncalibrated system is calibrated at `c1 = c2 = 1`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{
    answer_identity, AnswerCandidate, CalibrationExample, Dataset, DocumentCandidate, Prediction,
    Split,
};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimulatorConfig {
    pub n_examples: usize,
    pub pool_size: usize,
    pub k: usize,
    pub answers_per_doc: usize,
    pub retriever_sharpness: f64,
    pub reader_sharpness: f64,
    /// Reader sharpness on irrelevant documents; `None` means the reader is
    /// as confident on irrelevant documents as on the relevant one.
    pub irrelevant_reader_sharpness: Option<f64>,
    /// `c1`: reported retriever logits are the true ones times this.
    pub retriever_distortion: f64,
    /// `c2`: reported reader logits are the true ones times this.
    pub reader_distortion: f64,
    pub p_unanswerable: f64,
    pub seed: u64,
    /// Prefix of generated query ids.
    pub id_prefix: String,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            n_examples: 1000,
            pool_size: 20,
            k: 5,
            answers_per_doc: 4,
            retriever_sharpness: 2.5,
            reader_sharpness: 3.0,
            irrelevant_reader_sharpness: None,
            retriever_distortion: 1.0,
            reader_distortion: 1.0,
            p_unanswerable: 0.0,
            seed: 0,
            id_prefix: String::from("q"),
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.pool_size == 0 || self.answers_per_doc == 0 {
            return Err(Error::invalid(
                "pool_size and answers_per_doc must be positive",
            ));
        }
        if self.k == 0 || self.k > self.pool_size {
            return Err(Error::invalid("k must lie in 1..=pool_size"));
        }
        if !(positive(self.retriever_sharpness) && positive(self.reader_sharpness)) {
            return Err(Error::invalid("sharpness must be positive"));
        }
        if let Some(s) = self.irrelevant_reader_sharpness {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(
                    "irrelevant reader sharpness must be non-negative",
                ));
            }
        }
        if !(positive(self.retriever_distortion) && positive(self.reader_distortion)) {
            return Err(Error::invalid("distortions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_unanswerable) {
            return Err(Error::invalid("p_unanswerable must lie in [0, 1]"));
        }
        Ok(())
    }

    fn irrelevant_sharpness(&self) -> f64 {
        self.irrelevant_reader_sharpness
            .unwrap_or(self.reader_sharpness)
    }
}

/// Exact correctness probability of every generated candidate, keyed by
/// query id and answer identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub entries: BTreeMap<String, BTreeMap<String, f64>>,
}

impl GroundTruth {
    pub fn get(&self, query_id: &str, answer_key: &str) -> Option<f64> {
        self.entries
            .get(query_id)?
            .get(&answer_identity(answer_key))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flattened `(query_id, answer_key, probability)` rows in key order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.entries
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(a, &p)| (q.as_str(), a.as_str(), p)))
    }

    pub fn insert(&mut self, query_id: &str, answer_key: &str, p: f64) {
        self.entries
            .entry(query_id.into())
            .or_default()
            .insert(answer_identity(answer_key), p);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub examples: Vec<CalibrationExample>,
    pub truth: GroundTruth,
}

impl Simulation {
    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        Dataset::new(self.examples.clone(), split)
    }
}

/// Generates a dataset from the config's own seed.
pub fn generate(config: &SimulatorConfig) -> Result<Simulation> {
    let mut rng = RngState::named(config.seed, "simulate");
    generate_with_rng(config, &mut rng)
}

pub fn generate_with_rng(config: &SimulatorConfig, rng: &mut RngState) -> Result<Simulation> {
    config.validate()?;
    let n_docs = config.pool_size;
    let n_ans = config.answers_per_doc;
    let ds = config.retriever_sharpness;
    let dr = config.reader_sharpness;
    let di = config.irrelevant_sharpness();
    let pu = config.p_unanswerable;
    let mut examples = Vec::with_capacity(config.n_examples);
    let mut truth = GroundTruth::default();
    for q in 0..config.n_examples {
        let query_id = format!("{}{q:06}", config.id_prefix);
        let relevant = if rng.bernoulli(pu) {
            None
        } else {
            Some(rng.below(n_docs))
        };
        let mut docs = Vec::with_capacity(n_docs);
        let mut log_lr = Vec::with_capacity(n_docs);
        let mut reader_posteriors = Vec::with_capacity(n_docs);
        let mut gold = None;
        for i in 0..n_docs {
            let is_rel = relevant == Some(i);
            let x = rng.normal(if is_rel { ds } else { 0.0 }, 1.0);
            let favored = rng.below(n_ans);
            let sharp = if is_rel { dr } else { di };
            let y: Vec<f64> = (0..n_ans)
                .map(|j| rng.normal(if j == favored { sharp } else { 0.0 }, 1.0))
                .collect();
            if is_rel {
                gold = Some(favored);
            }
            let rel_terms: Vec<f64> = y.iter().map(|&v| dr * v - dr * dr / 2.0).collect();
            let irr_terms: Vec<f64> = y.iter().map(|&v| di * v - di * di / 2.0).collect();
            log_lr.push(
                ds * x - ds * ds / 2.0 + math::log_sum_exp(&rel_terms)
                    - math::log_sum_exp(&irr_terms),
            );
            let true_reader: Vec<f64> = y.iter().map(|&v| dr * v).collect();
            reader_posteriors.push(math::softmax(&true_reader));
            let answers = y
                .iter()
                .enumerate()
                .map(|(j, &v)| AnswerCandidate {
                    key: format!("d{i}-a{j}"),
                    reader_logit: config.reader_distortion * dr * v,
                    correct: is_rel && j == favored,
                })
                .collect();
            docs.push(DocumentCandidate {
                doc_id: format!("d{i}"),
                retriever_score: config.retriever_distortion * ds * x,
                relevant: is_rel,
                answers,
            });
        }
        debug_assert_eq!(gold.is_some(), relevant.is_some());

        // log P(z = i | data) with the "no relevant document" hypothesis in the normalizer.
        let log_prior = if pu < 1.0 {
            math::ln((1.0 - pu) / n_docs as f64)
        } else {
            f64::NEG_INFINITY
        };
        let mut norm_terms: Vec<f64> = log_lr.iter().map(|l| log_prior + l).collect();
        if pu > 0.0 {
            norm_terms.push(math::ln(pu));
        }
        let log_norm = math::log_sum_exp(&norm_terms);
        for (i, doc) in docs.iter().enumerate() {
            let p_doc = math::exp(log_prior + log_lr[i] - log_norm);
            for (a, &r) in doc.answers.iter().zip(&reader_posteriors[i]) {
                truth.insert(&query_id, &a.key, (p_doc * r).clamp(0.0, 1.0));
            }
        }
        examples.push(CalibrationExample::new(query_id, config.k, docs)?);
    }
    Ok(Simulation { examples, truth })
}

/// Exact probability that the predicted answer is correct.
pub fn true_confidence(truth: &GroundTruth, prediction: &Prediction) -> Result<f64> {
    truth
        .get(&prediction.query_id, &prediction.answer_key)
        .ok_or_else(|| {
            Error::UnknownCandidate(format!("{}/{}", prediction.query_id, prediction.answer_key))
        })
}

/// Replaces a random `floor(fraction * n)` subset of `a` with examples of `b`.
pub fn mix_ood(a: &Dataset, b: &Dataset, fraction: f64, rng: &mut RngState) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("fraction must lie in [0, 1]"));
    }
    let n = a.len();
    let m = libm::floor(fraction * n as f64) as usize;
    if b.len() < m {
        return Err(Error::invalid(format!(
            "out-of-distribution set has {} examples, {m} needed",
            b.len()
        )));
    }
    let positions = rng.sample_indices(n, m);
    let picks = rng.sample_indices(b.len(), m);
    let mut examples = a.examples.clone();
    for (&pos, &pick) in positions.iter().zip(&picks) {
        examples[pos] = b.examples[pick].clone();
    }
    Dataset::new(examples, a.split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimulatorConfig {
        SimulatorConfig {
            n_examples: 50,
            pool_size: 6,
            k: 2,
            seed,
            ..SimulatorConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small(4)).unwrap(), generate(&small(4)).unwrap());
        assert_ne!(generate(&small(4)).unwrap(), generate(&small(5)).unwrap());
    }

    #[test]
    fn truth_sums_to_at_most_one() {
        let cfg = SimulatorConfig {
            p_unanswerable: 0.3,
            irrelevant_reader_sharpness: Some(0.0),
            ..small(1)
        };
        let sim = generate(&cfg).unwrap();
        for m in sim.truth.entries.values() {
            assert!(m.values().sum::<f64>() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn unanswerable_examples_have_no_correct_candidate() {
        let cfg = SimulatorConfig {
            p_unanswerable: 1.0,
            ..small(2)
        };
        let sim = generate(&cfg).unwrap();
        for ex in &sim.examples {
            assert!(!ex.has_correct_candidate() && !ex.has_relevant_document());
            assert!(sim.truth.entries[&ex.query_id].values().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn noise_free_latent_answer_is_certain() {
        let cfg = SimulatorConfig {
            retriever_sharpness: 40.0,
            reader_sharpness: 40.0,
            ..small(3)
        };
        let sim = generate(&cfg).unwrap();
        for ex in &sim.examples {
            let doc = ex.pool.iter().find(|d| d.relevant).unwrap();
            let gold = doc.answers.iter().find(|a| a.correct).unwrap();
            assert!((sim.truth.get(&ex.query_id, &gold.key).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ood_mixing_counts() {
        let a = generate(&SimulatorConfig {
            n_examples: 100,
            ..small(1)
        })
        .unwrap()
        .dataset(Split::Test)
        .unwrap();
        let b = generate(&SimulatorConfig {
            n_examples: 100,
            id_prefix: "ood".into(),
            ..small(2)
        })
        .unwrap()
        .dataset(Split::Test)
        .unwrap();
        let mut rng = RngState::new(9);
        assert_eq!(mix_ood(&a, &b, 0.0, &mut rng).unwrap(), a);
        let all = mix_ood(&a, &b, 1.0, &mut rng).unwrap();
        assert!(all.examples.iter().all(|e| e.query_id.starts_with("ood")));
        let half = mix_ood(&a, &b, 0.5, &mut rng).unwrap();
        assert_eq!(half.len(), 100);
        assert_eq!(
            half.examples
                .iter()
                .filter(|e| e.query_id.starts_with("ood"))
                .count(),
            50
        );
        let tiny = Dataset::new(b.examples[..10].to_vec(), Split::Test).unwrap();
        assert!(mix_ood(&a, &tiny, 0.5, &mut rng).is_err());
    }

    #[test]
    fn unknown_prediction() {
        let sim = generate(&small(1)).unwrap();
        let p = Prediction {
            query_id: "nope".into(),
            answer_key: "x".into(),
            confidence: 0.5,
            correct: false,
        };
        assert!(true_confidence(&sim.truth, &p).is_err());
    }
}
