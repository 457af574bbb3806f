//! Calibration methods and their fitting procedures.
//!
//! Four methods are supported: temperature scaling, Platt scaling, an MLP
//! that predicts per-example temperatures, and a gradient boosted forecaster
//! that maps candidate features straight to a correctness probability.

mod features;
mod fit;
mod gbdt;
mod mlp;
mod scaling;

pub use features::{
    build_interest_set, build_interest_set_with_width, featurize, featurize_with_width,
    InterestEntry, RankingMode,
};
pub use fit::{
    fit_forecaster, fit_gradient_calibrator, FitConfig, FitLog, FitOutcome, ForecasterConfig,
    Objective, ObjectiveKind, ObjectiveValue,
};
pub use gbdt::{
    gbdt_predict, gbdt_train, gbdt_train_report, GbdtConfig, GbdtReport, RegressionTree,
    TreeEnsemble, TreeNode,
};
pub use mlp::{mlp_inverse_temperatures_graph, mlp_temperatures, Activation, MlpParams};
pub use scaling::{platt_scale, temp_scale};

use alloc::format;

use crate::data::CalibrationExample;
use crate::error::{Error, Result};
use crate::objectives::Scope;

/// Calibration method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    TempScaling,
    Platt,
    TempPredictor,
    Forecaster,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::TempScaling => "temp_scaling",
            Method::Platt => "platt",
            Method::TempPredictor => "temp_predictor",
            Method::Forecaster => "forecaster",
        }
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temp_scaling" => Ok(Method::TempScaling),
            "platt" => Ok(Method::Platt),
            "temp_predictor" => Ok(Method::TempPredictor),
            "forecaster" => Ok(Method::Forecaster),
            other => Err(Error::invalid(format!("unknown method {other}"))),
        }
    }
}

/// Retriever (`t1`) and reader (`t2`) temperatures.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TemperatureParams {
    pub t1: f64,
    pub t2: f64,
}

impl TemperatureParams {
    pub const IDENTITY: Self = Self { t1: 1.0, t2: 1.0 };

    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        let p = Self { t1, t2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 > 0.0 && self.t2 > 0.0 && self.t1.is_finite() && self.t2.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("temperatures must be finite and positive"))
        }
    }
}

/// Affine logit transforms: `a1 * s + b1` for retriever scores and
/// `a2 * r + b2` for reader logits.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlattParams {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl PlattParams {
    pub const IDENTITY: Self = Self {
        a1: 1.0,
        b1: 0.0,
        a2: 1.0,
        b2: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CalibratorParams {
    Temperature(TemperatureParams),
    Platt(PlattParams),
    TempPredictor(MlpParams),
    Forecaster(TreeEnsemble),
}

impl CalibratorParams {
    fn method(&self) -> Method {
        match self {
            CalibratorParams::Temperature(_) => Method::TempScaling,
            CalibratorParams::Platt(_) => Method::Platt,
            CalibratorParams::TempPredictor(_) => Method::TempPredictor,
            CalibratorParams::Forecaster(_) => Method::Forecaster,
        }
    }
}

/// How candidate features are laid out for the MLP and the forecaster.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureConfig {
    /// Number of retriever and per-document reader slots (the `k` used at fit time).
    pub width: usize,
    pub interest_size: usize,
    pub ranking: RankingMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            width: 1,
            interest_size: 3,
            ranking: RankingMode::TopPredictions,
        }
    }
}

/// Default number of best-scored documents kept per pool.
pub const DEFAULT_POOL_LIMIT: usize = 100;

/// A fitted calibrator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibratorModel {
    pub scope: Scope,
    pub method: Method,
    pub params: CalibratorParams,
    pub features: FeatureConfig,
    pub pool_limit: usize,
}

/// Per-example affine transforms derived from a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StageAffine {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl CalibratorModel {
    /// Temperature-scaling model with the given temperatures.
    pub fn temperature(scope: Scope, params: TemperatureParams) -> Self {
        Self {
            scope,
            method: Method::TempScaling,
            params: CalibratorParams::Temperature(params),
            features: FeatureConfig::default(),
            pool_limit: DEFAULT_POOL_LIMIT,
        }
    }

    /// The uncalibrated pipeline: identity temperatures.
    pub fn identity(scope: Scope) -> Self {
        Self::temperature(scope, TemperatureParams::IDENTITY)
    }

    /// Checks that the method tag matches the parameter variant and all values are finite.
    pub fn validate(&self) -> Result<()> {
        if self.params.method() != self.method {
            return Err(Error::invalid(format!(
                "method {} does not match {} parameters",
                self.method.name(),
                self.params.method().name()
            )));
        }
        if self.pool_limit == 0 {
            return Err(Error::invalid("pool limit must be positive"));
        }
        match &self.params {
            CalibratorParams::Temperature(t) => t.validate(),
            CalibratorParams::Platt(p) => {
                if [p.a1, p.b1, p.a2, p.b2].iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::NonFinite("platt parameters"))
                }
            }
            CalibratorParams::TempPredictor(m) => {
                if m.is_finite() && m.n_inputs == 2 * self.features.width + 2 {
                    Ok(())
                } else {
                    Err(Error::invalid("inconsistent temperature predictor"))
                }
            }
            CalibratorParams::Forecaster(e) => {
                let leaves_finite = e.trees.iter().all(|t| {
                    t.nodes.iter().all(|n| match n {
                        TreeNode::Leaf { value } => value.is_finite(),
                        TreeNode::Split { threshold, .. } => !threshold.is_nan(),
                    })
                });
                if e.prior_logit.is_finite() && leaves_finite {
                    Ok(())
                } else {
                    Err(Error::NonFinite("forecaster parameters"))
                }
            }
        }
    }

    /// Effective retriever and reader transforms for one example. Not
    /// defined for the forecaster.
    pub(crate) fn stage_affine(&self, example: &CalibrationExample) -> Result<StageAffine> {
        match &self.params {
            CalibratorParams::Temperature(t) => {
                t.validate()?;
                Ok(StageAffine {
                    a1: 1.0 / t.t1,
                    b1: 0.0,
                    a2: 1.0 / t.t2,
                    b2: 0.0,
                })
            }
            CalibratorParams::Platt(p) => Ok(StageAffine {
                a1: p.a1,
                b1: p.b1,
                a2: p.a2,
                b2: p.b2,
            }),
            CalibratorParams::TempPredictor(m) => {
                let x = features::predictor_input(example, self.features.width)?;
                let (t1, t2) = mlp_temperatures(&x, m)?;
                Ok(StageAffine {
                    a1: 1.0 / t1,
                    b1: 0.0,
                    a2: 1.0 / t2,
                    b2: 0.0,
                })
            }
            CalibratorParams::Forecaster(_) => {
                Err(Error::invalid("forecaster has no logit transform"))
            }
        }
    }

    /// Per-example temperatures, when the model has them.
    pub fn temperatures_for(&self, example: &CalibrationExample) -> Result<Option<(f64, f64)>> {
        match &self.params {
            CalibratorParams::Temperature(t) => Ok(Some((t.t1, t.t2))),
            CalibratorParams::TempPredictor(m) => {
                let x = features::predictor_input(example, self.features.width)?;
                mlp_temperatures(&x, m).map(Some)
            }
            _ => Ok(None),
        }
    }
}
