//! Command-line jobs. Each command is a pure function of its input files and
//! flags, so reruns produce byte-identical outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rrcal_core::calibrators::{
    fit_forecaster, fit_gradient_calibrator, Activation, GbdtConfig, RankingMode,
    DEFAULT_POOL_LIMIT,
};
use rrcal_core::data::split_calib_valid_test;
use rrcal_core::metrics::{aurc, compute_ece, reliability_rows, risk_coverage, selective_predict};
use rrcal_core::objectives::{nll, predict_dataset, system_confidence};
use rrcal_core::simulator::{generate, SimulatorConfig};
use rrcal_core::{
    AnnealSchedule, CalibrationExample, CalibratorModel, Dataset, FitConfig, ForecasterConfig,
    GateCoupling, Method, RngState, Scope, ScopeConfig, Split,
};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Parser)]
#[command(
    name = "rrcal",
    version,
    about = "Calibrate retriever-reader confidence scores"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic calib/valid/test splits and a ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Fit a calibrator on the calib split and report on the valid split.
    Calibrate(CalibrateArgs),
    /// Write ECE/AURC scalars, reliability rows, risk-coverage rows and predictions.
    Evaluate(EvaluateArgs),
    /// Write the risk-coverage curve and print AURC.
    Riskcov(RiskcovArgs),
    /// Write the confidence of every scored candidate.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Existing directory receiving calib.jsonl, valid.jsonl, test.jsonl and truth.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n_examples: usize,
    #[arg(long, default_value_t = 20)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub answers_per_doc: usize,
    #[arg(long, default_value_t = 2.5)]
    pub retriever_sharpness: f64,
    #[arg(long, default_value_t = 2.0)]
    pub reader_sharpness: f64,
    /// Reader sharpness in irrelevant documents; defaults to --reader-sharpness.
    #[arg(long)]
    pub irrelevant_reader_sharpness: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub retriever_distortion: f64,
    #[arg(long, default_value_t = 1.0)]
    pub reader_distortion: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_unanswerable: f64,
    #[arg(long, default_value = "q")]
    pub id_prefix: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RankingArg {
    TopPredictions,
    DocArgmax,
}

impl From<RankingArg> for RankingMode {
    fn from(r: RankingArg) -> Self {
        match r {
            RankingArg::TopPredictions => RankingMode::TopPredictions,
            RankingArg::DocArgmax => RankingMode::DocArgmax,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Tanh,
    Relu,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Relu => Activation::Relu,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Directory holding calib.jsonl and valid.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// temp_scaling, platt, temp_predictor or forecaster.
    #[arg(long)]
    pub method: Method,
    /// reader_only, individual or joint.
    #[arg(long, default_value = "joint")]
    pub scope: Scope,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit log file (JSON); printed to stdout when omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Subset size override applied to every example.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub mc_samples: usize,
    /// sequential, posterior or uniform.
    #[arg(long, default_value = "sequential")]
    pub coupling: GateCoupling,
    #[arg(long, default_value_t = 5.0)]
    pub t_start: f64,
    #[arg(long, default_value_t = 0.2)]
    pub t_end: f64,
    #[arg(long, default_value_t = 100)]
    pub anneal_steps: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step_size: f64,
    /// Examples per step; full batch when omitted.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub max_update: f64,
    #[arg(long, default_value_t = DEFAULT_POOL_LIMIT)]
    pub pool_limit: usize,
    #[arg(long, default_value_t = 10)]
    pub m_bins: usize,
    #[arg(long, default_value_t = 16)]
    pub mlp_hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mlp_init_std: f64,
    #[arg(long, value_enum, default_value = "tanh")]
    pub mlp_activation: ActivationArg,
    #[arg(long, default_value_t = 1.0)]
    pub inv_temp_scale: f64,
    #[arg(long, default_value_t = 100)]
    pub gbdt_rounds: usize,
    #[arg(long, default_value_t = 3)]
    pub gbdt_max_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    pub gbdt_learning_rate: f64,
    #[arg(long, default_value_t = 5)]
    pub gbdt_min_leaf: usize,
    #[arg(long, default_value_t = 3)]
    pub interest_size: usize,
    #[arg(long, value_enum, default_value = "top-predictions")]
    pub ranking: RankingArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Examples to score (JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// Existing directory receiving scalars.csv, reliability.csv, riskcov.csv and predictions.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub m_bins: usize,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RiskcovArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also report coverage and risk of answering at this confidence threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar; adds a true_confidence column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
}

/// Runs a parsed command and returns the text to print on stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Riskcov(a) => riskcov(&a),
        Command::Export(a) => export(&a),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<String> {
    io::require_dir(&a.out)?;
    let config = SimulatorConfig {
        n_examples: a.n_examples,
        pool_size: a.pool_size,
        k: a.k,
        answers_per_doc: a.answers_per_doc,
        retriever_sharpness: a.retriever_sharpness,
        reader_sharpness: a.reader_sharpness,
        irrelevant_reader_sharpness: a.irrelevant_reader_sharpness,
        retriever_distortion: a.retriever_distortion,
        reader_distortion: a.reader_distortion,
        p_unanswerable: a.p_unanswerable,
        seed: a.seed,
        id_prefix: a.id_prefix.clone(),
    };
    let sim = generate(&config)?;
    let splits = split_calib_valid_test(sim.examples)?;
    let mut counts = Vec::new();
    for ds in &splits {
        io::write_dataset(&io::split_path(&a.out, ds.split), &ds.examples)?;
        counts.push(format!("{}={}", ds.split.name(), ds.len()));
    }
    io::write_truth(&a.out.join("truth.csv"), &sim.truth)?;
    Ok(format!("wrote {}", counts.join(" ")))
}

/// Replaces every example's subset size, validating it against the pool.
fn with_k(dataset: Dataset, k: Option<usize>) -> Result<Dataset> {
    let Some(k) = k else { return Ok(dataset) };
    let split = dataset.split;
    let examples = dataset
        .examples
        .into_iter()
        .map(|e| CalibrationExample::new(e.query_id, k, e.pool))
        .collect::<rrcal_core::Result<Vec<_>>>()?;
    Ok(Dataset::new(examples, split)?)
}

fn load(path: &Path, split: Split, k: Option<usize>) -> Result<Dataset> {
    with_k(io::read_dataset(path, split)?, k)
}

#[derive(Debug, Serialize)]
struct StageRecord {
    objective: &'static str,
    initial: f64,
    final_value: f64,
    reverted: bool,
    history: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct FitReport {
    method: &'static str,
    scope: &'static str,
    seed: u64,
    calib_examples: usize,
    valid_examples: usize,
    stages: Vec<StageRecord>,
    gbdt_losses: Option<Vec<f64>>,
    valid_nll: f64,
    valid_nll_uncalibrated: f64,
    valid_ece: f64,
    valid_ece_uncalibrated: f64,
}

pub fn calibrate(a: &CalibrateArgs) -> Result<String> {
    let calib = load(&io::split_path(&a.data, Split::Calib), Split::Calib, a.k)?;
    let valid = load(&io::split_path(&a.data, Split::Valid), Split::Valid, a.k)?;
    if a.m_bins == 0 {
        return Err(Error::Usage("--m-bins must be positive".into()));
    }

    let mut stages = Vec::new();
    let mut gbdt_losses = None;
    let model = if a.method == Method::Forecaster {
        let config = ForecasterConfig {
            gbdt: GbdtConfig {
                rounds: a.gbdt_rounds,
                max_depth: a.gbdt_max_depth,
                learning_rate: a.gbdt_learning_rate,
                min_leaf: a.gbdt_min_leaf,
            },
            interest_size: a.interest_size,
            ranking: a.ranking.into(),
            pool_limit: a.pool_limit,
        };
        let (model, report) = fit_forecaster(&calib, a.scope, &config)?;
        gbdt_losses = Some(report.losses);
        model
    } else {
        let scope = ScopeConfig {
            scope: a.scope,
            mc_samples: a.mc_samples,
            pool_limit: a.pool_limit,
            coupling: a.coupling,
        };
        let config = FitConfig {
            step_size: a.step_size,
            epochs: a.epochs,
            batch_size: a.batch_size,
            anneal: AnnealSchedule::new(a.t_start, a.t_end, a.anneal_steps)?,
            mlp_hidden: a.mlp_hidden,
            mlp_init_std: a.mlp_init_std,
            mlp_activation: a.mlp_activation.into(),
            inv_temp_scale: a.inv_temp_scale,
            max_update: a.max_update,
        };
        let mut rng = RngState::named(a.seed, "fit");
        let outcome = fit_gradient_calibrator(&calib, &scope, a.method, &config, &mut rng)?;
        stages = outcome
            .log
            .stages
            .into_iter()
            .map(|s| StageRecord {
                objective: s.objective,
                initial: s.initial,
                final_value: s.final_value,
                reverted: s.reverted,
                history: s.history,
            })
            .collect();
        outcome.model
    };

    let mut identity = CalibratorModel::identity(a.scope);
    identity.pool_limit = a.pool_limit;
    let preds = predict_dataset(&valid, &model)?;
    let base = predict_dataset(&valid, &identity)?;
    let (valid_ece, valid_ece_uncalibrated) = if valid.is_empty() {
        (0.0, 0.0)
    } else {
        (
            compute_ece(&preds, a.m_bins)?.ece,
            compute_ece(&base, a.m_bins)?.ece,
        )
    };
    let report = FitReport {
        method: a.method.name(),
        scope: a.scope.name(),
        seed: a.seed,
        calib_examples: calib.len(),
        valid_examples: valid.len(),
        stages,
        gbdt_losses,
        valid_nll: nll(&valid, &model)?.mean(),
        valid_nll_uncalibrated: nll(&valid, &identity)?.mean(),
        valid_ece,
        valid_ece_uncalibrated,
    };

    io::write_model(&a.out, &model)?;
    let summary = format!(
        "valid_ece={:.6} valid_ece_uncalibrated={:.6} valid_nll={:.6}",
        report.valid_ece, report.valid_ece_uncalibrated, report.valid_nll
    );
    match &a.log {
        Some(path) => {
            io::write_json(path, &report)?;
            Ok(summary)
        }
        None => serde_json::to_string_pretty(&report).map_err(|e| Error::Usage(e.to_string())),
    }
}

fn scored(model_path: &Path, input: &Path, k: Option<usize>) -> Result<(CalibratorModel, Dataset)> {
    let model = io::read_model(model_path)?;
    let data = load(input, Split::Test, k)?;
    Ok((model, data))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<String> {
    io::require_dir(&a.out)?;
    let (model, data) = scored(&a.model, &a.input, a.k)?;
    let preds = predict_dataset(&data, &model)?;
    let report = compute_ece(&preds, a.m_bins)?;
    let area = aurc(&preds)?;
    let accuracy = preds.iter().filter(|p| p.correct).count() as f64 / preds.len() as f64;
    let nll = nll(&data, &model)?;
    let scalars = [
        ("n", preds.len() as f64),
        ("accuracy", accuracy),
        ("ece", report.ece),
        ("aurc", area),
        ("nll", nll.mean()),
    ];
    io::write_scalars(&a.out.join("scalars.csv"), &scalars)?;
    io::write_reliability(&a.out.join("reliability.csv"), &reliability_rows(&report))?;
    io::write_risk_coverage(&a.out.join("riskcov.csv"), &risk_coverage(&preds)?)?;
    io::write_predictions(&a.out.join("predictions.csv"), &preds)?;
    Ok(format!(
        "ece={:.6} aurc={:.6} accuracy={:.6}",
        report.ece, area, accuracy
    ))
}

pub fn riskcov(a: &RiskcovArgs) -> Result<String> {
    let (model, data) = scored(&a.model, &a.input, a.k)?;
    let preds = predict_dataset(&data, &model)?;
    io::write_risk_coverage(&a.out, &risk_coverage(&preds)?)?;
    let mut line = format!("aurc={:.6}", aurc(&preds)?);
    if let Some(t) = a.threshold {
        let sel = selective_predict(&preds, t)?;
        line.push_str(&format!(
            " coverage={:.6} risk={:.6}",
            sel.coverage, sel.risk
        ));
    }
    Ok(line)
}

pub fn export(a: &ExportArgs) -> Result<String> {
    let (model, data) = scored(&a.model, &a.input, a.k)?;
    let truth = a.truth.as_deref().map(io::read_truth).transpose()?;
    let mut w = csv::Writer::from_writer(io::create_file(&a.out)?);
    let csv_err = |source| Error::Csv {
        path: a.out.clone(),
        source,
    };
    let mut header = vec!["query_id", "answer", "confidence", "correct"];
    if truth.is_some() {
        header.push("true_confidence");
    }
    w.write_record(&header).map_err(csv_err)?;
    let mut rows = 0usize;
    for ex in &data.examples {
        for (key, conf) in system_confidence(ex, &model)? {
            let mut record = vec![
                ex.query_id.clone(),
                key.clone(),
                conf.to_string(),
                ex.is_correct(&key).to_string(),
            ];
            if let Some(t) = &truth {
                record.push(
                    t.get(&ex.query_id, &key)
                        .map_or(String::new(), |p| p.to_string()),
                );
            }
            w.write_record(&record).map_err(csv_err)?;
            rows += 1;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    Ok(format!("wrote {rows} rows"))
}
