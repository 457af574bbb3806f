//! Gradient-descent fitting of the parametric calibrators and training of
//! the forecaster.

use alloc::vec;
use alloc::vec::Vec;

use super::features::predictor_input;
use super::gbdt::{gbdt_train_report, GbdtConfig, GbdtReport};
use super::mlp::{mlp_inverse_temperatures_graph, Activation, MlpParams};
use super::{
    build_interest_set_with_width, CalibratorModel, CalibratorParams, FeatureConfig, Method,
    PlattParams, RankingMode, TemperatureParams,
};
use crate::data::{CalibrationExample, Dataset};
use crate::error::{Error, Result};
use crate::grad::{Expr, Graph};
use crate::gumbel::AnnealSchedule;
use crate::math;
use crate::objectives::{self, GateCoupling, Scope, ScopeConfig, StageExprs};
use crate::rng::RngState;

/// Optimizer and model-shape settings for gradient-based fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitConfig {
    pub step_size: f64,
    pub epochs: usize,
    /// Examples per step; `None` uses the full dataset every step.
    pub batch_size: Option<usize>,
    /// Relaxation temperature schedule of joint fitting, one step per epoch.
    pub anneal: AnnealSchedule,
    pub mlp_hidden: usize,
    pub mlp_init_std: f64,
    pub mlp_activation: Activation,
    /// Upper bound of the predicted inverse temperatures.
    pub inv_temp_scale: f64,
    /// Largest change of any parameter in one step.
    pub max_update: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            epochs: 200,
            batch_size: None,
            anneal: AnnealSchedule::default(),
            mlp_hidden: 16,
            mlp_init_std: 0.1,
            mlp_activation: Activation::Tanh,
            inv_temp_scale: 1.0,
            max_update: 0.1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !(self.max_update > 0.0) {
            return Err(Error::invalid("max update must be positive"));
        }
        if !(self.inv_temp_scale > 0.0 && self.inv_temp_scale.is_finite()) {
            return Err(Error::invalid("inverse temperature scale must be positive"));
        }
        self.anneal.validate()
    }

    /// Relaxation temperature used at `epoch`: annealed over the first
    /// `anneal.total_steps` epochs, then held at `anneal.t_end`.
    fn relaxation_temperature(&self, epoch: usize) -> Result<f64> {
        self.anneal.anneal(epoch.min(self.anneal.total_steps))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForecasterConfig {
    pub gbdt: GbdtConfig,
    pub interest_size: usize,
    pub ranking: RankingMode,
    pub pool_limit: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            gbdt: GbdtConfig::default(),
            interest_size: 3,
            ranking: RankingMode::TopPredictions,
            pool_limit: super::DEFAULT_POOL_LIMIT,
        }
    }
}

/// Which loss an [`Objective`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    ReaderOnly,
    /// First stage of the individual scope.
    RetrieverStage,
    /// Second stage of the individual scope.
    ReaderStage,
    Joint {
        mc_samples: usize,
        coupling: GateCoupling,
    },
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::ReaderOnly => "reader_only",
            ObjectiveKind::RetrieverStage => "retriever_stage",
            ObjectiveKind::ReaderStage => "reader_stage",
            ObjectiveKind::Joint { .. } => "joint",
        }
    }
}

/// Summed loss and gradient over the contributing terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub sum: f64,
    pub terms: usize,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Parametrization {
    /// `theta = [ln t1, ln t2]`.
    LogTemperature,
    /// `theta = [a1, b1, a2, b2]`.
    Platt,
    /// `theta` = MLP weights; one standardized input row per example.
    Mlp {
        shape: MlpParams,
        inputs: Vec<Vec<f64>>,
    },
}

/// A differentiable calibration loss over a fixed list of examples.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    examples: &'a [CalibrationExample],
    kind: ObjectiveKind,
    param: Parametrization,
}

impl<'a> Objective<'a> {
    pub fn temperature(examples: &'a [CalibrationExample], kind: ObjectiveKind) -> Self {
        Self {
            examples,
            kind,
            param: Parametrization::LogTemperature,
        }
    }

    pub fn platt(examples: &'a [CalibrationExample], kind: ObjectiveKind) -> Self {
        Self {
            examples,
            kind,
            param: Parametrization::Platt,
        }
    }

    /// MLP objective; `shape` supplies layer sizes, activation and
    /// standardization, `width` the feature slot count.
    pub fn mlp(
        examples: &'a [CalibrationExample],
        kind: ObjectiveKind,
        shape: &MlpParams,
        width: usize,
    ) -> Result<Self> {
        let inputs = examples
            .iter()
            .map(|ex| shape.standardize(&predictor_input(ex, width)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            examples,
            kind,
            param: Parametrization::Mlp {
                shape: shape.clone(),
                inputs,
            },
        })
    }

    pub fn n_params(&self) -> usize {
        match &self.param {
            Parametrization::LogTemperature => 2,
            Parametrization::Platt => 4,
            Parametrization::Mlp { shape, .. } => shape.n_weights(),
        }
    }

    /// Loss and gradient over all examples.
    pub fn evaluate(
        &self,
        theta: &[f64],
        temperature: f64,
        rng: &mut RngState,
    ) -> Result<ObjectiveValue> {
        let all: Vec<usize> = (0..self.examples.len()).collect();
        self.evaluate_subset(theta, &all, temperature, rng)
    }

    /// Loss and gradient over the examples at `indices`, in that order.
    /// `temperature` is the relaxation temperature and only matters for the
    /// joint objective, as does `rng`.
    pub fn evaluate_subset(
        &self,
        theta: &[f64],
        indices: &[usize],
        temperature: f64,
        rng: &mut RngState,
    ) -> Result<ObjectiveValue> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        let mut out = ObjectiveValue {
            sum: 0.0,
            terms: 0,
            grad: vec![0.0; theta.len()],
        };
        let mut g = Graph::new();
        for &i in indices {
            let ex = self
                .examples
                .get(i)
                .ok_or_else(|| Error::invalid("example index out of range"))?;
            g.clear();
            let p: Vec<Expr> = theta.iter().map(|&v| g.param(v)).collect();
            let st = self.stage_exprs(&mut g, &p, i)?;
            let loss = match self.kind {
                ObjectiveKind::ReaderOnly => objectives::reader_only_loss(&mut g, ex, &st),
                ObjectiveKind::RetrieverStage => objectives::retriever_stage_loss(&mut g, ex, &st),
                ObjectiveKind::ReaderStage => objectives::reader_stage_loss(&mut g, ex, &st),
                ObjectiveKind::Joint {
                    mc_samples,
                    coupling,
                } => {
                    objectives::joint_loss(&mut g, ex, &st, temperature, mc_samples, coupling, rng)?
                }
            };
            let Some((root, terms)) = loss else { continue };
            out.sum += g.evaluate(root)?;
            out.terms += terms;
            let grads = g.backward(root)?;
            for (slot, &pe) in out.grad.iter_mut().zip(&p) {
                *slot += grads.get(pe);
            }
        }
        Ok(out)
    }

    fn stage_exprs(&self, g: &mut Graph, p: &[Expr], example: usize) -> Result<StageExprs> {
        Ok(match &self.param {
            Parametrization::LogTemperature => {
                let n1 = g.neg(p[0]);
                let n2 = g.neg(p[1]);
                let zero = g.constant(0.0);
                StageExprs {
                    a1: g.exp(n1),
                    b1: zero,
                    a2: g.exp(n2),
                    b2: zero,
                }
            }
            Parametrization::Platt => StageExprs {
                a1: p[0],
                b1: p[1],
                a2: p[2],
                b2: p[3],
            },
            Parametrization::Mlp { shape, inputs } => {
                let [a1, a2] = mlp_inverse_temperatures_graph(g, shape, p, &inputs[example])?;
                let zero = g.constant(0.0);
                StageExprs {
                    a1,
                    b1: zero,
                    a2,
                    b2: zero,
                }
            }
        })
    }
}

/// Trace of one optimization stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub objective: &'static str,
    /// Mean loss at every step (on that step's batch).
    pub history: Vec<f64>,
    /// Mean full-data loss before and after the stage.
    pub initial: f64,
    pub final_value: f64,
    /// Whether the fitted parameters were discarded for not improving the loss.
    pub reverted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitLog {
    pub stages: Vec<StageLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub model: CalibratorModel,
    pub log: FitLog,
}

/// Fits temperature scaling, Platt scaling or the temperature predictor in
/// the given scope by gradient descent.
pub fn fit_gradient_calibrator(
    dataset: &Dataset,
    scope: &ScopeConfig,
    method: Method,
    config: &FitConfig,
    rng: &mut RngState,
) -> Result<FitOutcome> {
    scope.validate()?;
    config.validate()?;
    if method == Method::Forecaster {
        return Err(Error::Incompatible {
            method: method.name(),
            scope: scope.scope.name(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::Empty("calibration dataset"));
    }
    if scope.scope == Scope::Individual
        && !dataset.examples.iter().any(|e| e.has_relevant_document())
    {
        return Err(Error::MissingRelevance);
    }
    let data = dataset.truncated(scope.pool_limit);
    let examples = &data.examples[..];
    let width = examples.iter().map(|e| e.k).max().unwrap_or(1);

    let (mut objective, mut theta, heads) = match method {
        Method::TempScaling => (
            Objective::temperature(examples, ObjectiveKind::ReaderOnly),
            vec![0.0, 0.0],
            [vec![0], vec![1]],
        ),
        Method::Platt => (
            Objective::platt(examples, ObjectiveKind::ReaderOnly),
            vec![1.0, 0.0, 1.0, 0.0],
            [vec![0, 1], vec![2, 3]],
        ),
        Method::TempPredictor => {
            let mut shape =
                MlpParams::random(2 * width + 2, config.mlp_hidden, config.mlp_init_std, rng);
            shape.activation = config.mlp_activation;
            shape.inv_temp_scale = config.inv_temp_scale;
            let raw = examples
                .iter()
                .map(|ex| predictor_input(ex, width))
                .collect::<Result<Vec<_>>>()?;
            shape.fit_standardization(&raw)?;
            let theta = shape.weights();
            let reader_head = shape.head_indices(1);
            let retriever: Vec<usize> = (0..theta.len())
                .filter(|i| !reader_head.contains(i))
                .collect();
            let obj = Objective::mlp(examples, ObjectiveKind::ReaderOnly, &shape, width)?;
            (obj, theta, [retriever, reader_head])
        }
        Method::Forecaster => unreachable!(),
    };
    let all: Vec<usize> = (0..theta.len()).collect();
    let [retriever_mask, reader_mask] = heads;
    let stages: Vec<(ObjectiveKind, Vec<usize>)> = match scope.scope {
        Scope::ReaderOnly => vec![(ObjectiveKind::ReaderOnly, reader_mask)],
        Scope::Individual => vec![
            (ObjectiveKind::RetrieverStage, retriever_mask),
            (ObjectiveKind::ReaderStage, reader_mask),
        ],
        Scope::Joint => vec![(
            ObjectiveKind::Joint {
                mc_samples: scope.mc_samples,
                coupling: scope.coupling,
            },
            all,
        )],
    };

    let mut log = FitLog::default();
    for (kind, mask) in stages {
        objective.kind = kind;
        log.stages
            .push(descend(&objective, &mut theta, &mask, config, rng)?);
    }

    let params = match (method, objective.param) {
        (Method::TempScaling, _) => CalibratorParams::Temperature(TemperatureParams::new(
            math::exp(theta[0]),
            math::exp(theta[1]),
        )?),
        (Method::Platt, _) => CalibratorParams::Platt(PlattParams {
            a1: theta[0],
            b1: theta[1],
            a2: theta[2],
            b2: theta[3],
        }),
        (_, Parametrization::Mlp { mut shape, .. }) => {
            shape.set_weights(&theta)?;
            CalibratorParams::TempPredictor(shape)
        }
        _ => unreachable!(),
    };
    Ok(FitOutcome {
        model: CalibratorModel {
            scope: scope.scope,
            method,
            params,
            features: FeatureConfig {
                width,
                ..FeatureConfig::default()
            },
            pool_limit: scope.pool_limit,
        },
        log,
    })
}

/// Plain gradient descent on the mean loss over the coordinates in `mask`.
/// Stochastic objectives return the average of the iterates taken after the
/// relaxation temperature has reached its final value. Keeps the starting
/// point if the final full-data loss is not lower.
fn descend(
    objective: &Objective<'_>,
    theta: &mut Vec<f64>,
    mask: &[usize],
    config: &FitConfig,
    rng: &mut RngState,
) -> Result<StageLog> {
    let n = objective.examples.len();
    let guard = rng.substream(0x0067_7561_7264);
    let start = theta.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let stochastic = matches!(objective.kind, ObjectiveKind::Joint { .. })
        || config.batch_size.is_some_and(|b| b < n);
    let mut tail_sum = vec![0.0; theta.len()];
    let mut tail_count = 0usize;
    for epoch in 0..config.epochs {
        let t = config.relaxation_temperature(epoch)?;
        let batch: Vec<usize> = match config.batch_size {
            Some(b) if b < n => rng.sample_indices(n, b),
            _ => (0..n).collect(),
        };
        let v = objective.evaluate_subset(theta, &batch, t, rng)?;
        if v.terms == 0 {
            break;
        }
        if !v.sum.is_finite() || v.grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: epoch });
        }
        history.push(v.sum / v.terms as f64);
        for &i in mask {
            let step = config.step_size * v.grad[i] / v.terms as f64;
            theta[i] -= step.clamp(-config.max_update, config.max_update);
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: epoch });
        }
        if stochastic && epoch >= config.anneal.total_steps {
            for (acc, x) in tail_sum.iter_mut().zip(theta.iter()) {
                *acc += x;
            }
            tail_count += 1;
        }
    }
    if tail_count > 0 {
        for (x, acc) in theta.iter_mut().zip(&tail_sum) {
            *x = acc / tail_count as f64;
        }
    }
    let t_end = config.anneal.t_end;
    let mean = |v: &ObjectiveValue| {
        if v.terms == 0 {
            0.0
        } else {
            v.sum / v.terms as f64
        }
    };
    let initial = mean(&objective.evaluate(&start, t_end, &mut guard.clone())?);
    let mut final_value = mean(&objective.evaluate(theta, t_end, &mut guard.clone())?);
    let reverted = !(final_value <= initial);
    if reverted {
        theta.clone_from(&start);
        final_value = initial;
    }
    Ok(StageLog {
        objective: objective.kind.name(),
        history,
        initial,
        final_value,
        reverted,
    })
}

/// Trains the forecaster on the interest sets of the calibration split.
pub fn fit_forecaster(
    dataset: &Dataset,
    scope: Scope,
    config: &ForecasterConfig,
) -> Result<(CalibratorModel, GbdtReport)> {
    if dataset.is_empty() {
        return Err(Error::Empty("calibration dataset"));
    }
    if config.interest_size == 0 {
        return Err(Error::invalid("interest set size must be positive"));
    }
    let data = dataset.truncated(config.pool_limit.max(1));
    let width = data.examples.iter().map(|e| e.k).max().unwrap_or(1);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for ex in &data.examples {
        for entry in build_interest_set_with_width(ex, config.interest_size, config.ranking, width)?
        {
            labels.push(ex.is_correct(&entry.key));
            rows.push(entry.features);
        }
    }
    let report = gbdt_train_report(&rows, &labels, &config.gbdt)?;
    let model = CalibratorModel {
        scope,
        method: Method::Forecaster,
        params: CalibratorParams::Forecaster(report.ensemble.clone()),
        features: FeatureConfig {
            width,
            interest_size: config.interest_size,
            ranking: config.ranking,
        },
        pool_limit: config.pool_limit.max(1),
    };
    Ok((model, report))
}

/// Rows and labels the forecaster is trained on.
#[cfg(test)]
pub(crate) fn forecaster_rows(dataset: &Dataset, size: usize) -> usize {
    dataset
        .examples
        .iter()
        .map(|ex| {
            super::features::Ranking::new(ex)
                .top(size, RankingMode::TopPredictions)
                .len()
        })
        .sum()
}
