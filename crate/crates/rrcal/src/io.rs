//! Line-delimited example files, model documents and CSV tables.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rrcal_core::metrics::{ReliabilityRow, RiskCoveragePoint};
use rrcal_core::simulator::GroundTruth;
use rrcal_core::{CalibrationExample, CalibratorModel, Dataset, Prediction, Split};

use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Creates `path` for writing; its directory must already exist.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Ensures `dir` exists and is a directory.
pub fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::MissingDirectory(dir.to_path_buf()))
    }
}

/// Reads one example per non-blank line. Pools are sorted by retriever score
/// and every example is validated; errors carry the offending line number.
pub fn read_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut examples = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let mut ex: CalibrationExample =
            serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        ex.normalize().map_err(|e| parse(e.to_string()))?;
        if let Some(first) = seen.insert(ex.query_id.clone(), lineno) {
            return Err(parse(format!(
                "duplicate query id {} (first seen on line {first})",
                ex.query_id
            )));
        }
        examples.push(ex);
    }
    Ok(Dataset::new(examples, split)?)
}

pub fn write_dataset(path: &Path, examples: &[CalibrationExample]) -> Result<()> {
    let mut out = create_file(path)?;
    for ex in examples {
        serde_json::to_writer(&mut out, ex).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Model document. Floats are written in shortest round-trip form, so
/// loading reproduces every parameter bit for bit.
pub fn write_model(path: &Path, model: &CalibratorModel) -> Result<()> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<CalibratorModel> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let model: CalibratorModel = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    model.validate()?;
    Ok(model)
}

pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create_file(path)?))
}

fn finish(path: &Path, mut w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.flush().map_err(io_err(path))
}

/// Ground-truth sidecar: `query_id,answer_key,probability`.
pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["query_id", "answer_key", "probability"])
        .map_err(csv_err(path))?;
    for (q, a, p) in truth.rows() {
        w.serialize((q, a, p)).map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut truth = GroundTruth::default();
    for (i, row) in r.deserialize::<(String, String, f64)>().enumerate() {
        let (q, a, p) = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        truth.insert(&q, &a, p);
    }
    Ok(truth)
}

/// `bin_lo,bin_hi,count,avg_conf,avg_acc`, one row per bin.
pub fn write_reliability(path: &Path, rows: &[ReliabilityRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_lo", "bin_hi", "count", "avg_conf", "avg_acc"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.serialize((r.bin_lo, r.bin_hi, r.count, r.avg_conf, r.avg_acc))
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// `threshold,coverage,risk`, one row per prefix of the ranking.
pub fn write_risk_coverage(path: &Path, points: &[RiskCoveragePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["threshold", "coverage", "risk"])
        .map_err(csv_err(path))?;
    for p in points {
        w.serialize((p.threshold, p.coverage, p.risk))
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// `metric,value` rows.
pub fn write_scalars(path: &Path, rows: &[(&str, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["metric", "value"]).map_err(csv_err(path))?;
    for (name, value) in rows {
        w.serialize((name, value)).map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// `query_id,answer,confidence,correct`.
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["query_id", "answer", "confidence", "correct"])
        .map_err(csv_err(path))?;
    for p in predictions {
        w.serialize((&p.query_id, &p.answer_key, p.confidence, p.correct))
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// Standard file name of a split inside a data directory.
pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}
