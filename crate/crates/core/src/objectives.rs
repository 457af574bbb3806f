//! Calibration scopes, system confidence and the fitting objectives.
//!
//! * **Reader only**: the retriever is trusted blindly; an answer's confidence
//!   is its best reader probability over the pool documents.
//! * **Individual** and **joint**: an answer's confidence is the pool mixture
//!   `sum_i P(d_i | q) * P(a | q, d_i)` of retriever posterior and reader
//!   probability. The two scopes differ only in how the temperatures are fit:
//!   individually (retriever on relevance labels, then reader on relevant
//!   documents) or jointly through the relaxed top-k sampler.

use alloc::borrow::Cow;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::calibrators::{
    build_interest_set_with_width, gbdt_predict, temp_scale, CalibratorModel, CalibratorParams,
    FitConfig, Method, Objective, ObjectiveKind, StageAffine, TemperatureParams,
};
use crate::data::{answer_identity, CalibrationExample, Dataset, DocumentCandidate, Prediction};
use crate::error::{Error, Result};
use crate::grad::{Expr, Graph};
use crate::gumbel::{gumbel_noise, relaxed_topk_graph, GateVector};
use crate::math::{self, PROB_FLOOR};
use crate::rng::RngState;

/// Calibration scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scope {
    ReaderOnly,
    Individual,
    Joint,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::ReaderOnly => "reader_only",
            Scope::Individual => "individual",
            Scope::Joint => "joint",
        }
    }
}

impl core::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reader_only" => Ok(Scope::ReaderOnly),
            "individual" => Ok(Scope::Individual),
            "joint" => Ok(Scope::Joint),
            other => Err(Error::invalid(format!("unknown scope {other}"))),
        }
    }
}

/// How relaxed gates weight the per-document reader distributions in the
/// joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GateCoupling {
    /// `(1/k) * sum_i g_i * r_i`: uniform mixture over the selected documents.
    Uniform,
    /// `sum_i g_i w_i r_i / sum_i g_i w_i` with `w` the retriever posterior:
    /// the posterior mixture restricted to the selected documents. Equals
    /// the inference-time mixture when every document is selected.
    Posterior,
    /// Ordered without-replacement estimate of the full posterior mixture:
    /// the first `k - 1` selected documents enter with their posterior
    /// weight and the last one carries the remaining mass,
    /// `sum_{l<k} sum_i d_li w_i r_i + (1 - sum_{l<k} sum_i d_li w_i) sum_i d_ki r_i`
    /// with `d_l` the relaxed one-hot of step `l`. Under hard sampling its
    /// expectation is the inference-time mixture for every `k`.
    #[default]
    Sequential,
}

impl GateCoupling {
    pub fn name(self) -> &'static str {
        match self {
            GateCoupling::Uniform => "uniform",
            GateCoupling::Posterior => "posterior",
            GateCoupling::Sequential => "sequential",
        }
    }
}

impl core::str::FromStr for GateCoupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(GateCoupling::Uniform),
            "posterior" => Ok(GateCoupling::Posterior),
            "sequential" => Ok(GateCoupling::Sequential),
            other => Err(Error::invalid(format!("unknown gate coupling {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScopeConfig {
    pub scope: Scope,
    /// Relaxed subsets drawn per example and step in joint fitting.
    pub mc_samples: usize,
    pub pool_limit: usize,
    pub coupling: GateCoupling,
}

impl ScopeConfig {
    pub fn new(scope: Scope) -> Self {
        Self {
            scope,
            mc_samples: 4,
            pool_limit: crate::calibrators::DEFAULT_POOL_LIMIT,
            coupling: GateCoupling::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        if self.pool_limit == 0 {
            return Err(Error::invalid("pool_limit must be positive"));
        }
        Ok(())
    }
}

/// Confidence per answer identity.
pub type ConfidenceMap = BTreeMap<String, f64>;

/// `softmax(scores / t1)` over the pool.
pub fn retriever_posterior(example: &CalibrationExample, t1: f64) -> Result<Vec<f64>> {
    if example.pool.is_empty() {
        return Err(Error::Empty("pool"));
    }
    temp_scale(&example.retriever_scores(), t1)
}

/// `softmax(reader logits / t2)` over one document's candidates.
pub fn reader_confidence(doc: &DocumentCandidate, t2: f64) -> Result<Vec<f64>> {
    let logits: Vec<f64> = doc.answers.iter().map(|a| a.reader_logit).collect();
    temp_scale(&logits, t2)
}

fn reader_probs(doc: &DocumentCandidate, a: f64, b: f64) -> Vec<f64> {
    let logits: Vec<f64> = doc.answers.iter().map(|x| x.reader_logit).collect();
    math::softmax_affine(&logits, a, b)
}

fn mixture_map(example: &CalibrationExample, aff: &StageAffine) -> ConfidenceMap {
    let w = math::softmax_affine(&example.retriever_scores(), aff.a1, aff.b1);
    let mut out = ConfidenceMap::new();
    for (doc, &wi) in example.pool.iter().zip(&w) {
        for (a, p) in doc.answers.iter().zip(reader_probs(doc, aff.a2, aff.b2)) {
            *out.entry(answer_identity(&a.key)).or_insert(0.0) += wi * p;
        }
    }
    for v in out.values_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

fn reader_only_map(example: &CalibrationExample, aff: &StageAffine) -> ConfidenceMap {
    let mut out = ConfidenceMap::new();
    for doc in &example.pool {
        let mut within: BTreeMap<String, f64> = BTreeMap::new();
        for (a, p) in doc.answers.iter().zip(reader_probs(doc, aff.a2, aff.b2)) {
            *within.entry(answer_identity(&a.key)).or_insert(0.0) += p;
        }
        for (k, p) in within {
            let slot = out.entry(k).or_insert(0.0);
            *slot = slot.max(p.clamp(0.0, 1.0));
        }
    }
    out
}

fn limited<'a>(example: &'a CalibrationExample, limit: usize) -> Cow<'a, CalibrationExample> {
    if example.pool.len() > limit {
        Cow::Owned(example.truncated(limit))
    } else {
        Cow::Borrowed(example)
    }
}

/// Confidence of every candidate answer under a model. For the forecaster
/// only the interest set is scored and values are not normalized.
pub fn system_confidence(
    example: &CalibrationExample,
    model: &CalibratorModel,
) -> Result<ConfidenceMap> {
    let ex = limited(example, model.pool_limit);
    if let CalibratorParams::Forecaster(ensemble) = &model.params {
        let set = build_interest_set_with_width(
            &ex,
            model.features.interest_size,
            model.features.ranking,
            model.features.width,
        )?;
        return set
            .into_iter()
            .map(|e| Ok((e.key, gbdt_predict(ensemble, &e.features)?)))
            .collect();
    }
    let aff = model.stage_affine(&ex)?;
    Ok(match model.scope {
        Scope::ReaderOnly => reader_only_map(&ex, &aff),
        Scope::Individual | Scope::Joint => mixture_map(&ex, &aff),
    })
}

/// The predicted answer and its confidence. The forecaster answers with the
/// top uncalibrated candidate; other methods with their most confident one.
pub fn predict(example: &CalibrationExample, model: &CalibratorModel) -> Result<Prediction> {
    let (answer_key, confidence) = if let CalibratorParams::Forecaster(ensemble) = &model.params {
        let ex = limited(example, model.pool_limit);
        let set =
            build_interest_set_with_width(&ex, 1, model.features.ranking, model.features.width)?;
        let top = set.into_iter().next().ok_or(Error::Empty("interest set"))?;
        let p = gbdt_predict(ensemble, &top.features)?;
        (top.key, p)
    } else {
        let map = system_confidence(example, model)?;
        let mut best: Option<(String, f64)> = None;
        for (k, v) in map {
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((k, v));
            }
        }
        best.ok_or(Error::Empty("candidates"))?
    };
    let correct = example.is_correct(&answer_key);
    Ok(Prediction {
        query_id: example.query_id.clone(),
        answer_key,
        confidence,
        correct,
    })
}

pub fn predict_dataset(dataset: &Dataset, model: &CalibratorModel) -> Result<Vec<Prediction>> {
    dataset.examples.iter().map(|e| predict(e, model)).collect()
}

/// Summed negative log-likelihood with the number of examples that had no
/// correct candidate and were skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllReport {
    pub total: f64,
    pub counted: usize,
    pub skipped: usize,
}

impl NllReport {
    pub fn mean(&self) -> f64 {
        if self.counted == 0 {
            0.0
        } else {
            self.total / self.counted as f64
        }
    }
}

/// `-sum log P(correct | q)` where the probability is the system confidence
/// mass on correct answer identities, clamped to `[1e-12, 1]`.
pub fn nll(dataset: &Dataset, model: &CalibratorModel) -> Result<NllReport> {
    let mut report = NllReport {
        total: 0.0,
        counted: 0,
        skipped: 0,
    };
    for ex in &dataset.examples {
        if !ex.has_correct_candidate() {
            report.skipped += 1;
            continue;
        }
        let correct = correct_identities(ex);
        let mass: f64 = system_confidence(ex, model)?
            .iter()
            .filter(|(k, _)| correct.contains(k.as_str()))
            .map(|(_, v)| v)
            .sum();
        report.total -= math::ln(mass.clamp(PROB_FLOOR, 1.0));
        report.counted += 1;
    }
    Ok(report)
}

/// Relaxed-subset confidence for fixed gates.
pub fn relaxed_system_confidence(
    example: &CalibrationExample,
    gates: &GateVector,
    params: &TemperatureParams,
    coupling: GateCoupling,
) -> Result<ConfidenceMap> {
    params.validate()?;
    if gates.gates.len() != example.pool.len() {
        return Err(Error::DimensionMismatch {
            expected: example.pool.len(),
            got: gates.gates.len(),
        });
    }
    let k = gates.k();
    if k == 0 {
        return Err(Error::invalid("gate vector has no steps"));
    }
    let weights: Vec<f64> = match coupling {
        GateCoupling::Uniform => gates.gates.iter().map(|g| g / k as f64).collect(),
        GateCoupling::Posterior => {
            let w = retriever_posterior(example, params.t1)?;
            let raw: Vec<f64> = gates.gates.iter().zip(&w).map(|(g, w)| g * w).collect();
            let total: f64 = raw.iter().sum();
            if !(total > 0.0) {
                return Err(Error::NonFinite("gated posterior mass"));
            }
            raw.iter().map(|v| v / total).collect()
        }
        GateCoupling::Sequential => {
            let w = retriever_posterior(example, params.t1)?;
            let mut out = vec![0.0; w.len()];
            let mut taken = 0.0;
            for step in &gates.per_step[..k - 1] {
                for ((o, d), wi) in out.iter_mut().zip(step).zip(&w) {
                    *o += d * wi;
                    taken += d * wi;
                }
            }
            let rest = (1.0 - taken).max(0.0);
            for (o, d) in out.iter_mut().zip(&gates.per_step[k - 1]) {
                *o += rest * d;
            }
            out
        }
    };
    let mut out = ConfidenceMap::new();
    for (doc, &wi) in example.pool.iter().zip(&weights) {
        for (a, p) in doc.answers.iter().zip(reader_confidence(doc, params.t2)?) {
            *out.entry(answer_identity(&a.key)).or_insert(0.0) += wi * p;
        }
    }
    Ok(out)
}

/// Value and gradient of the Monte-Carlo joint NLL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointNll {
    /// Sum over examples with a correct candidate.
    pub value: f64,
    /// Gradient with respect to `(ln t1, ln t2)`.
    pub grad_log_t: [f64; 2],
    pub counted: usize,
}

/// Joint objective at relaxation temperature `temperature`, drawing
/// `mc_samples` relaxed subsets per example from `rng`.
pub fn joint_mc_nll(
    examples: &[CalibrationExample],
    params: &TemperatureParams,
    temperature: f64,
    mc_samples: usize,
    coupling: GateCoupling,
    rng: &mut RngState,
) -> Result<JointNll> {
    params.validate()?;
    let objective = Objective::temperature(
        examples,
        ObjectiveKind::Joint {
            mc_samples,
            coupling,
        },
    );
    let theta = [math::ln(params.t1), math::ln(params.t2)];
    let v = objective.evaluate(&theta, temperature, rng)?;
    Ok(JointNll {
        value: v.sum,
        grad_log_t: [v.grad[0], v.grad[1]],
        counted: v.terms,
    })
}

/// Two-stage individual fit of `(t1, t2)` by temperature scaling.
pub fn fit_individual(dataset: &Dataset, config: &FitConfig) -> Result<TemperatureParams> {
    let mut rng = RngState::named(0, "individual");
    let outcome = crate::calibrators::fit_gradient_calibrator(
        dataset,
        &ScopeConfig::new(Scope::Individual),
        Method::TempScaling,
        config,
        &mut rng,
    )?;
    match outcome.model.params {
        CalibratorParams::Temperature(t) => Ok(t),
        _ => unreachable!("temperature scaling yields temperature parameters"),
    }
}

// ---- graph builders used by the fitting code ----

/// Differentiable retriever/reader transforms of one example.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StageExprs {
    pub a1: Expr,
    pub b1: Expr,
    pub a2: Expr,
    pub b2: Expr,
}

pub(crate) fn correct_identities(example: &CalibrationExample) -> BTreeSet<String> {
    example
        .pool
        .iter()
        .flat_map(|d| d.answers.iter())
        .filter(|a| a.correct)
        .map(|a| answer_identity(&a.key))
        .collect()
}

fn affine_exprs(g: &mut Graph, values: &[f64], a: Expr, b: Expr) -> Vec<Expr> {
    values
        .iter()
        .map(|&v| {
            let s = g.mul_const(a, v);
            g.add(s, b)
        })
        .collect()
}

fn neg_log_clamped(g: &mut Graph, p: Expr) -> Expr {
    let c = g.clamp(p, PROB_FLOOR, 1.0);
    let l = g.log(c);
    g.neg(l)
}

/// Reader probability mass of the answers in `doc` accepted by `keep`.
fn doc_mass_expr(
    g: &mut Graph,
    doc: &DocumentCandidate,
    st: &StageExprs,
    keep: impl Fn(&str) -> bool,
) -> Option<Expr> {
    let idx: Vec<usize> = (0..doc.answers.len())
        .filter(|&j| keep(&answer_identity(&doc.answers[j].key)))
        .collect();
    if idx.is_empty() {
        return None;
    }
    let logits: Vec<f64> = doc.answers.iter().map(|a| a.reader_logit).collect();
    let z = affine_exprs(g, &logits, st.a2, st.b2);
    let p = g.softmax(&z);
    let terms: Vec<Expr> = idx.iter().map(|&j| p[j]).collect();
    Some(g.sum(&terms))
}

/// Reader-only loss: each correct identity contributes its best document's
/// reader mass (the maximizing document is chosen at the current values).
pub(crate) fn reader_only_loss(
    g: &mut Graph,
    ex: &CalibrationExample,
    st: &StageExprs,
) -> Option<(Expr, usize)> {
    let correct = correct_identities(ex);
    if correct.is_empty() {
        return None;
    }
    let (a2, b2) = (g.value(st.a2), g.value(st.b2));
    let mut terms = Vec::new();
    for id in &correct {
        let mut best: Option<(usize, f64)> = None;
        for (i, doc) in ex.pool.iter().enumerate() {
            let p = reader_probs(doc, a2, b2);
            let mass: f64 = doc
                .answers
                .iter()
                .zip(&p)
                .filter(|(a, _)| answer_identity(&a.key) == *id)
                .map(|(_, p)| p)
                .sum();
            let present = doc.answers.iter().any(|a| answer_identity(&a.key) == *id);
            if present && best.is_none_or(|b| mass > b.1) {
                best = Some((i, mass));
            }
        }
        if let Some((i, _)) = best {
            if let Some(m) = doc_mass_expr(g, &ex.pool[i], st, |k| k == id) {
                terms.push(m);
            }
        }
    }
    let mass = g.sum(&terms);
    Some((neg_log_clamped(g, mass), 1))
}

/// Retriever stage of the individual fit: posterior mass on relevant documents.
pub(crate) fn retriever_stage_loss(
    g: &mut Graph,
    ex: &CalibrationExample,
    st: &StageExprs,
) -> Option<(Expr, usize)> {
    if !ex.has_relevant_document() {
        return None;
    }
    let z = affine_exprs(g, &ex.retriever_scores(), st.a1, st.b1);
    let w = g.softmax(&z);
    let rel: Vec<Expr> = ex
        .pool
        .iter()
        .zip(&w)
        .filter(|(d, _)| d.relevant)
        .map(|(_, &e)| e)
        .collect();
    let mass = g.sum(&rel);
    Some((neg_log_clamped(g, mass), 1))
}

/// Reader stage of the individual fit: one term per relevant document that
/// contains a correct answer.
pub(crate) fn reader_stage_loss(
    g: &mut Graph,
    ex: &CalibrationExample,
    st: &StageExprs,
) -> Option<(Expr, usize)> {
    let correct = correct_identities(ex);
    let mut terms = Vec::new();
    for doc in ex.pool.iter().filter(|d| d.relevant) {
        if let Some(m) = doc_mass_expr(g, doc, st, |k| correct.contains(k)) {
            terms.push(neg_log_clamped(g, m));
        }
    }
    if terms.is_empty() {
        return None;
    }
    let n = terms.len();
    Some((g.sum(&terms), n))
}

/// `sum_i weights_i * masses_i` over documents with a correct answer.
fn masked_sum(g: &mut Graph, masses: &[Option<Expr>], weights: &[Expr]) -> Expr {
    let terms: Vec<Expr> = masses
        .iter()
        .zip(weights)
        .filter_map(|(m, &x)| m.map(|m| g.mul(x, m)))
        .collect();
    g.sum(&terms)
}

/// Monte-Carlo joint loss of one example. Examples without a correct
/// candidate, or whose `k` covers the whole pool, draw no noise.
pub(crate) fn joint_loss(
    g: &mut Graph,
    ex: &CalibrationExample,
    st: &StageExprs,
    temperature: f64,
    mc_samples: usize,
    coupling: GateCoupling,
    rng: &mut RngState,
) -> Result<Option<(Expr, usize)>> {
    let correct = correct_identities(ex);
    if correct.is_empty() {
        return Ok(None);
    }
    let masses: Vec<Option<Expr>> = ex
        .pool
        .iter()
        .map(|d| doc_mass_expr(g, d, st, |k| correct.contains(k)))
        .collect();
    let scaled = affine_exprs(g, &ex.retriever_scores(), st.a1, st.b1);
    let posterior = match coupling {
        GateCoupling::Uniform => None,
        _ => Some(g.softmax(&scaled)),
    };
    let n = ex.pool.len();
    if ex.k >= n {
        // The only subset is the whole pool, so the objective is deterministic.
        let conf = match &posterior {
            Some(w) => masked_sum(g, &masses, w),
            None => {
                let ones: Vec<Expr> = (0..n).map(|_| g.constant(1.0)).collect();
                let s = masked_sum(g, &masses, &ones);
                g.mul_const(s, 1.0 / n as f64)
            }
        };
        return Ok(Some((neg_log_clamped(g, conf), 1)));
    }
    let mut samples = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples {
        let noise = gumbel_noise(rng, n);
        let gates = relaxed_topk_graph(g, &scaled, &noise, ex.k, temperature)?;
        let conf = match (coupling, &posterior) {
            (GateCoupling::Posterior, Some(w)) => {
                let gw: Vec<Expr> = gates
                    .gates
                    .iter()
                    .zip(w)
                    .map(|(&gi, &wi)| g.mul(gi, wi))
                    .collect();
                let den = g.sum(&gw);
                let num = masked_sum(g, &masses, &gw);
                g.div(num, den)
            }
            (GateCoupling::Sequential, Some(w)) => {
                let (last, head) = gates.per_step.split_last().expect("k >= 1");
                let head_weight: Vec<Expr> = (0..n)
                    .map(|i| {
                        let col: Vec<Expr> = head.iter().map(|step| step[i]).collect();
                        let gi = g.sum(&col);
                        g.mul(gi, w[i])
                    })
                    .collect();
                let taken = g.sum(&head_weight);
                let neg = g.neg(taken);
                let left = g.add_const(neg, 1.0);
                let rest = g.max_const(left, 0.0);
                let head_conf = masked_sum(g, &masses, &head_weight);
                let tail = masked_sum(g, &masses, last);
                let tail_conf = g.mul(rest, tail);
                g.add(head_conf, tail_conf)
            }
            _ => {
                let s = masked_sum(g, &masses, &gates.gates);
                g.mul_const(s, 1.0 / ex.k as f64)
            }
        };
        samples.push(conf);
    }
    let total = g.sum(&samples);
    let avg = g.mul_const(total, 1.0 / mc_samples as f64);
    Ok(Some((neg_log_clamped(g, avg), 1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::*;
    use crate::data::Split;
    use crate::gumbel::relaxed_topk_with_noise;
    use crate::rng::RngState;
    use alloc::vec;

    fn logit(p: f64) -> f64 {
        math::ln(p / (1.0 - p))
    }

    #[test]
    fn posterior_examples() {
        let ex = single_doc_example("q", &[0.0], 0);
        assert_eq!(retriever_posterior(&ex, 0.7).unwrap(), vec![1.0]);
        let ex = CalibrationExample::new(
            "q",
            1,
            vec![
                doc("a", 3.0, true, vec![answer("x", 0.0, true)]),
                doc("b", 1.0, false, vec![answer("y", 0.0, false)]),
                doc("c", 0.0, false, vec![answer("z", 0.0, false)]),
            ],
        )
        .unwrap();
        let p = retriever_posterior(&ex, 1.0).unwrap();
        for (a, b) in p.iter().zip([0.8438, 0.1142, 0.0420]) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(retriever_posterior(&ex, 0.0).is_err());
    }

    #[test]
    fn reader_examples() {
        let d = doc(
            "a",
            0.0,
            true,
            vec![answer("x", 1.0, true), answer("y", -1.0, false)],
        );
        let p = reader_confidence(&d, 2.0).unwrap();
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        let d = doc(
            "a",
            0.0,
            true,
            vec![answer("x", 0.0, true), answer("y", 0.0, false)],
        );
        assert_eq!(reader_confidence(&d, 1.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn product_of_posterior_and_reader() {
        // Posterior 0.99 for the first document, reader 0.79 for the answer.
        let ex = CalibrationExample::new(
            "q",
            1,
            vec![
                doc(
                    "a",
                    math::ln(99.0),
                    true,
                    vec![
                        answer("ans", logit(0.79), true),
                        answer("other", 0.0, false),
                    ],
                ),
                doc("b", 0.0, false, vec![answer("zzz", 0.0, false)]),
            ],
        )
        .unwrap();
        let m = system_confidence(&ex, &CalibratorModel::identity(Scope::Joint)).unwrap();
        assert!((m["ans"] - 0.99 * 0.79).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_average_the_readers() {
        let (p, q) = (0.7, 0.2);
        let ex = CalibrationExample::new(
            "q",
            2,
            vec![
                doc(
                    "a",
                    1.0,
                    true,
                    vec![answer("x", logit(p), true), answer("y", 0.0, false)],
                ),
                doc(
                    "b",
                    1.0,
                    false,
                    vec![answer("x", logit(q), true), answer("z", 0.0, false)],
                ),
            ],
        )
        .unwrap();
        let m = system_confidence(&ex, &CalibratorModel::identity(Scope::Individual)).unwrap();
        assert!((m["x"] - (p + q) / 2.0).abs() < 1e-12);
        assert!(m.values().sum::<f64>() <= 1.0 + 1e-9);
        let r = system_confidence(&ex, &CalibratorModel::identity(Scope::ReaderOnly)).unwrap();
        assert!((r["x"] - p).abs() < 1e-12);
    }

    #[test]
    fn nll_examples() {
        let half = single_doc_example("q0", &[0.0, 0.0], 0);
        let mut h2 = half.clone();
        h2.query_id = "q1".into();
        let ds = Dataset::new(vec![half, h2], Split::Calib).unwrap();
        let r = nll(&ds, &CalibratorModel::identity(Scope::Joint)).unwrap();
        assert!((r.total - 2.0 * math::ln(2.0)).abs() < 1e-12);

        let sure = single_doc_example("q", &[0.0], 0);
        let ds = Dataset::new(vec![sure], Split::Calib).unwrap();
        assert_eq!(
            nll(&ds, &CalibratorModel::identity(Scope::Joint))
                .unwrap()
                .total,
            0.0
        );

        let hopeless = single_doc_example("q", &[0.0, 2000.0], 0);
        let ds = Dataset::new(vec![hopeless], Split::Calib).unwrap();
        let r = nll(&ds, &CalibratorModel::identity(Scope::Joint)).unwrap();
        assert!((r.total - 27.631).abs() < 1e-3);

        let none = single_doc_example("q", &[0.0, 1.0], 7);
        let ds = Dataset::new(vec![none], Split::Calib).unwrap();
        let r = nll(&ds, &CalibratorModel::identity(Scope::Joint)).unwrap();
        assert_eq!((r.counted, r.skipped), (0, 1));
    }

    #[test]
    fn relaxed_confidence_limits() {
        let ex = CalibrationExample::new(
            "q",
            2,
            vec![
                doc(
                    "a",
                    2.0,
                    true,
                    vec![answer("x", 1.0, true), answer("y", 0.0, false)],
                ),
                doc(
                    "b",
                    1.0,
                    false,
                    vec![answer("x", -1.0, true), answer("z", 0.5, false)],
                ),
            ],
        )
        .unwrap();
        let gates = relaxed_topk_with_noise(&ex.retriever_scores(), &[0.1, -0.3], 2, 0.01).unwrap();
        let t = TemperatureParams::IDENTITY;
        let uniform = relaxed_system_confidence(&ex, &gates, &t, GateCoupling::Uniform).unwrap();
        let r0 = reader_confidence(&ex.pool[0], 1.0).unwrap();
        let r1 = reader_confidence(&ex.pool[1], 1.0).unwrap();
        assert!((uniform["x"] - (r0[0] + r1[0]) / 2.0).abs() < 1e-9);
        let post = relaxed_system_confidence(&ex, &gates, &t, GateCoupling::Posterior).unwrap();
        let exact = system_confidence(&ex, &CalibratorModel::identity(Scope::Joint)).unwrap();
        for (k, v) in &exact {
            assert!((post[k] - v).abs() < 1e-9);
        }
    }

    fn three_doc_example(k: usize) -> CalibrationExample {
        CalibrationExample::new(
            "q",
            k,
            vec![
                doc(
                    "a",
                    1.5,
                    true,
                    vec![answer("x", 1.0, true), answer("y", 0.0, false)],
                ),
                doc(
                    "b",
                    0.5,
                    false,
                    vec![answer("x", -1.0, true), answer("z", 0.5, false)],
                ),
                doc(
                    "c",
                    0.0,
                    false,
                    vec![answer("w", 2.0, false), answer("x", 0.0, true)],
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn sequential_coupling_is_unbiased_for_the_mixture() {
        let ex = three_doc_example(2);
        let t = TemperatureParams::new(1.3, 0.8).unwrap();
        let model = CalibratorModel::temperature(Scope::Joint, t);
        let exact = system_confidence(&ex, &model).unwrap();
        let scaled: Vec<f64> = ex.retriever_scores().iter().map(|s| s / t.t1).collect();
        let mut rng = RngState::new(11);
        let draws = 40_000;
        let mut mean = 0.0;
        let mut total = 0.0;
        for _ in 0..draws {
            let noise = gumbel_noise(&mut rng, 3);
            let gates = relaxed_topk_with_noise(&scaled, &noise, 2, 1e-3).unwrap();
            let conf =
                relaxed_system_confidence(&ex, &gates, &t, GateCoupling::Sequential).unwrap();
            mean += conf["x"] / draws as f64;
            total += conf.values().sum::<f64>() / draws as f64;
        }
        assert!((mean - exact["x"]).abs() < 0.01, "{mean} vs {}", exact["x"]);
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn full_pool_joint_objective_is_the_exact_nll() {
        let ex = three_doc_example(3);
        let t = TemperatureParams::new(0.7, 1.6).unwrap();
        let model = CalibratorModel::temperature(Scope::Joint, t);
        let dataset = Dataset::new(vec![ex.clone()], Split::Calib).unwrap();
        let exact = nll(&dataset, &model).unwrap().total;
        for coupling in [GateCoupling::Posterior, GateCoupling::Sequential] {
            let mut rng = RngState::new(3);
            let before = rng.clone();
            let v =
                joint_mc_nll(core::slice::from_ref(&ex), &t, 0.5, 4, coupling, &mut rng).unwrap();
            assert!((v.value - exact).abs() < 1e-12);
            assert_eq!(rng, before);
        }
    }

    #[test]
    fn scope_names_round_trip() {
        for s in [Scope::ReaderOnly, Scope::Individual, Scope::Joint] {
            assert_eq!(s.name().parse::<Scope>().unwrap(), s);
        }
        for c in [
            GateCoupling::Uniform,
            GateCoupling::Posterior,
            GateCoupling::Sequential,
        ] {
            assert_eq!(c.name().parse::<GateCoupling>().unwrap(), c);
        }
    }

    #[test]
    fn empty_joint_objective_is_zero() {
        let mut rng = RngState::new(1);
        let v = joint_mc_nll(
            &[],
            &TemperatureParams::IDENTITY,
            1.0,
            4,
            GateCoupling::Posterior,
            &mut rng,
        )
        .unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(v.grad_log_t, [0.0, 0.0]);
    }
}
