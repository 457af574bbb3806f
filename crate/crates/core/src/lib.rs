//! Calibration toolkit for retriever-reader machine reading pipelines.
//!
//! The crate consumes per-query score dumps (retriever document logits, reader
//! answer logits, correctness labels) and provides:
//!
//! * [`grad`]: a small reverse-mode differentiation tape over scalar graphs,
//! * [`gumbel`]: Gumbel-top-k sampling, its successive-softmax relaxation and a
//!   Plackett-Luce oracle,
//! * [`calibrators`]: temperature scaling, Platt scaling, a temperature
//!   predicting MLP and a gradient boosted forecaster, plus their fitting,
//! * [`objectives`]: reader-only, individual and joint calibration scopes,
//! * [`metrics`]: ECE, reliability rows, risk-coverage and AURC,
//! * [`simulator`]: a synthetic pipeline with closed-form ground truth.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the command
//! line live in the `rrcal` companion crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibrators;
pub mod data;
pub mod error;
pub mod grad;
pub mod gumbel;
pub(crate) mod math;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod simulator;

pub use calibrators::{
    CalibratorModel, CalibratorParams, FitConfig, ForecasterConfig, Method, MlpParams, PlattParams,
    TemperatureParams,
};
pub use data::{
    AnswerCandidate, CalibrationExample, Dataset, DocumentCandidate, Prediction, Split,
};
pub use error::{Error, Result};
pub use gumbel::{AnnealSchedule, GateVector};
pub use metrics::{EceReport, RiskCoveragePoint};
pub use objectives::{GateCoupling, Scope, ScopeConfig};
pub use rng::RngState;
