//! Expected calibration error, reliability rows, risk-coverage and AURC.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Prediction;
use crate::error::{Error, Result};

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

/// One equal-width confidence bin.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence, 0 for an empty bin.
    pub avg_conf: f64,
    /// Fraction correct, 0 for an empty bin.
    pub avg_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EceReport {
    pub ece: f64,
    pub bins: Vec<Bin>,
    pub n: usize,
}

fn check_confidences(predictions: &[Prediction]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions
        .iter()
        .any(|p| !(p.confidence >= 0.0 && p.confidence <= 1.0))
    {
        return Err(Error::invalid("confidences must lie in [0, 1]"));
    }
    Ok(())
}

/// Bin of `c` among `m` bins `[j/m, (j+1)/m)`, the last one closed.
pub fn bin_index(c: f64, m: usize) -> usize {
    let mf = m as f64;
    let mut j = ((c * mf) as usize).min(m - 1);
    while j > 0 && c < j as f64 / mf {
        j -= 1;
    }
    while j + 1 < m && c >= (j + 1) as f64 / mf {
        j += 1;
    }
    j
}

pub fn compute_ece(predictions: &[Prediction], m_bins: usize) -> Result<EceReport> {
    if m_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    check_confidences(predictions)?;
    let mut count = vec![0usize; m_bins];
    let mut conf = vec![0.0; m_bins];
    let mut acc = vec![0.0; m_bins];
    for p in predictions {
        let j = bin_index(p.confidence, m_bins);
        count[j] += 1;
        conf[j] += p.confidence;
        acc[j] += if p.correct { 1.0 } else { 0.0 };
    }
    let n = predictions.len();
    let mut ece = 0.0;
    let bins = (0..m_bins)
        .map(|j| {
            let (avg_conf, avg_acc) = if count[j] == 0 {
                (0.0, 0.0)
            } else {
                (conf[j] / count[j] as f64, acc[j] / count[j] as f64)
            };
            ece += count[j] as f64 / n as f64 * (avg_acc - avg_conf).abs();
            Bin {
                lo: j as f64 / m_bins as f64,
                hi: (j + 1) as f64 / m_bins as f64,
                count: count[j],
                avg_conf,
                avg_acc,
            }
        })
        .collect();
    Ok(EceReport { ece, bins, n })
}

/// One reliability-diagram row per bin, ordered by `bin_lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReliabilityRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub avg_conf: f64,
    pub avg_acc: f64,
}

pub fn reliability_rows(report: &EceReport) -> Vec<ReliabilityRow> {
    report
        .bins
        .iter()
        .map(|b| ReliabilityRow {
            bin_lo: b.lo,
            bin_hi: b.hi,
            count: b.count,
            avg_conf: b.avg_conf,
            avg_acc: b.avg_acc,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub risk: f64,
    pub threshold: f64,
}

/// Predictions sorted by confidence descending, ties by query id.
fn ranked(predictions: &[Prediction]) -> Vec<&Prediction> {
    let mut v: Vec<&Prediction> = predictions.iter().collect();
    v.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.query_id.cmp(&b.query_id))
    });
    v
}

/// One point per prefix of the confidence-ranked predictions.
pub fn risk_coverage(predictions: &[Prediction]) -> Result<Vec<RiskCoveragePoint>> {
    check_confidences(predictions)?;
    let n = predictions.len() as f64;
    let mut wrong = 0usize;
    Ok(ranked(predictions)
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            wrong += usize::from(!p.correct);
            RiskCoveragePoint {
                coverage: (i + 1) as f64 / n,
                risk: wrong as f64 / (i + 1) as f64,
                threshold: p.confidence,
            }
        })
        .collect())
}

/// Area under the risk-coverage curve: the mean of the prefix risks.
pub fn aurc(predictions: &[Prediction]) -> Result<f64> {
    let points = risk_coverage(predictions)?;
    Ok(points.iter().map(|p| p.risk).sum::<f64>() / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveResult {
    pub coverage: f64,
    /// Error rate among answered predictions; 0 when nothing is answered.
    pub risk: f64,
    pub answered: Vec<String>,
}

/// Answers exactly the predictions with `confidence >= threshold`.
pub fn selective_predict(predictions: &[Prediction], threshold: f64) -> Result<SelectiveResult> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    let answered: Vec<&Prediction> = predictions
        .iter()
        .filter(|p| p.confidence >= threshold)
        .collect();
    let wrong = answered.iter().filter(|p| !p.correct).count();
    let coverage = if predictions.is_empty() {
        0.0
    } else {
        answered.len() as f64 / predictions.len() as f64
    };
    let risk = if answered.is_empty() {
        0.0
    } else {
        wrong as f64 / answered.len() as f64
    };
    Ok(SelectiveResult {
        coverage,
        risk,
        answered: answered.into_iter().map(|p| p.query_id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn preds(conf: &[f64], correct: &[bool]) -> Vec<Prediction> {
        conf.iter()
            .zip(correct)
            .enumerate()
            .map(|(i, (&c, &y))| Prediction {
                query_id: format!("q{i:03}"),
                answer_key: "a".into(),
                confidence: c,
                correct: y,
            })
            .collect()
    }

    #[test]
    fn two_bin_example() {
        let p = preds(&[0.9, 0.8, 0.3, 0.2], &[true, false, false, true]);
        let r = compute_ece(&p, 2).unwrap();
        assert!((r.bins[0].avg_conf - 0.25).abs() < 1e-12);
        assert!((r.bins[0].avg_acc - 0.5).abs() < 1e-12);
        assert!((r.bins[1].avg_conf - 0.85).abs() < 1e-12);
        assert!((r.ece - 0.30).abs() < 1e-12);
        assert_eq!(reliability_rows(&r).len(), 2);
    }

    #[test]
    fn perfect_cases() {
        let p = preds(&[1.0; 5], &[true; 5]);
        assert_eq!(compute_ece(&p, 10).unwrap().ece, 0.0);
        let correct: Vec<bool> = (0..100).map(|i| i < 70).collect();
        let p = preds(&[0.7; 100], &correct);
        assert!(compute_ece(&p, 10).unwrap().ece < 1e-12);
    }

    #[test]
    fn empty_bins_and_errors() {
        let p = preds(&[0.05], &[true]);
        let r = compute_ece(&p, 10).unwrap();
        let rows = reliability_rows(&r);
        assert_eq!(rows[5].count, 0);
        assert_eq!((rows[5].avg_conf, rows[5].avg_acc), (0.0, 0.0));
        assert!(compute_ece(&[], 10).is_err());
        assert!(compute_ece(&preds(&[1.5], &[true]), 10).is_err());
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.3, 10), 3);
        assert_eq!(bin_index(0.5, 2), 1);
        assert_eq!(bin_index(0.49999, 2), 0);
    }

    #[test]
    fn risk_coverage_example() {
        let p = preds(&[0.9, 0.6, 0.3], &[true, true, false]);
        let pts = risk_coverage(&p).unwrap();
        let got: Vec<(f64, f64)> = pts.iter().map(|x| (x.coverage, x.risk)).collect();
        assert_eq!(got, [(1.0 / 3.0, 0.0), (2.0 / 3.0, 0.0), (1.0, 1.0 / 3.0)]);
        assert!((aurc(&p).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(aurc(&preds(&[0.2, 0.9], &[true, true])).unwrap(), 0.0);
        assert_eq!(aurc(&preds(&[0.2, 0.9], &[false, false])).unwrap(), 1.0);
    }

    #[test]
    fn selective_examples() {
        let p = preds(&[0.9, 0.6, 0.3], &[true, true, false]);
        assert_eq!(selective_predict(&p, 0.0).unwrap().coverage, 1.0);
        let none = selective_predict(&p, 0.95).unwrap();
        assert_eq!((none.coverage, none.risk), (0.0, 0.0));
        let half = selective_predict(&p, 0.5).unwrap();
        assert!((half.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(half.risk, 0.0);
        assert_eq!(half.answered, ["q000", "q001"]);
    }
}
