//! End-to-end prediction: split the tensor along days, optionally complete
//! the learning part, decompose it, forecast the temporal factor columns,
//! and reconstruct the predicted block.
//!
//! Two modes exist. Factor-space mode fits one CP model and forecasts its R
//! temporal columns; raw mode trains an independent predictor per (f, t)
//! fiber as the non-decomposition baseline. Both are deterministic for a
//! fixed config: every predictor gets a seed derived from its column or
//! fiber index, so the rayon schedule cannot change results.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{complete, CompletionOptions, CompletionRecord};
use crate::cp::{cp_als, rank_bound, AlsOptions, FactorSet};
use crate::error::{Error, Result};
use crate::lstm::TrainConfig;
use crate::predictors::{ArPredictor, LstmPredictor, Predictor};
use crate::tensor::{Mat, MaskTensor3, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Lstm,
    Ar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    /// Forecast the R temporal factor columns of a CP fit.
    Cpd,
    /// Forecast every (f, t) fiber directly.
    Raw,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rank: usize,
    pub n_learn: usize,
    pub n_predict: usize,
    pub predictor: PredictorKind,
    pub mode: PredictionMode,
    /// Settings for the completion stage of the joint path. `None` means
    /// defaults; the rank and ALS options are overridden by `rank`/`als`
    /// either way so one model spans completion and forecasting.
    pub completion: Option<CompletionOptions>,
    /// ALS settings for the decomposition stage. The default turns on a
    /// ridge weight of 0.1: once the fit reaches the noise floor, plain ALS
    /// on an over-specified rank grows pairs of large, mutually cancelling
    /// components. Reconstruction hides that, but the columns are forecast
    /// independently, and any forecast error destroys the cancellation.
    /// Regularizing keeps the columns individually meaningful, which is
    /// what the forecasting stage needs; fits that are measured rather than
    /// forecast should use the plain defaults instead.
    pub als: AlsOptions,
    pub train: TrainConfig,
    pub ar_order: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rank: 10,
            n_learn: 80,
            n_predict: 20,
            predictor: PredictorKind::Lstm,
            mode: PredictionMode::Cpd,
            completion: None,
            als: AlsOptions {
                ridge: 0.1,
                ..AlsOptions::default()
            },
            train: TrainConfig::default(),
            ar_order: 7,
        }
    }
}

impl PipelineConfig {
    fn validate(&self, dims: (usize, usize, usize)) -> Result<()> {
        if self.n_learn != dims.2 {
            return Err(Error::InvalidOption(format!(
                "n_learn {} does not match learning tensor depth {}",
                self.n_learn, dims.2
            )));
        }
        if self.n_predict == 0 {
            return Err(Error::InvalidOption("n_predict must be >= 1".into()));
        }
        if self.ar_order == 0 {
            return Err(Error::InvalidOption("ar_order must be >= 1".into()));
        }
        if self.mode == PredictionMode::Cpd {
            let bound = rank_bound(dims);
            if self.rank == 0 || self.rank > bound {
                return Err(Error::RankOutOfBounds {
                    rank: self.rank,
                    bound,
                });
            }
        }
        Ok(())
    }
}

/// Output of one prediction run. `e_p` stays `None` until a scoring wrapper
/// compares the prediction against a held-out test tensor.
#[derive(Clone, Debug)]
pub struct PredictionReport {
    /// Predicted block, dims (F, T, n_predict).
    pub predicted: Tensor3,
    pub e_p: Option<f64>,
    /// Wall-clock seconds spent on decomposition (or completion in the
    /// joint path). Zero in raw mode.
    pub cpd_seconds: f64,
    /// Wall-clock seconds spent training and running the predictors.
    pub learn_seconds: f64,
    pub total_seconds: f64,
    /// Factor matrices with the temporal factor extended over learned and
    /// predicted days. `None` in raw mode.
    pub factors: Option<FactorSet>,
    /// Per-iteration completion errors from the joint path.
    pub completion_history: Option<Vec<CompletionRecord>>,
}

/// Splits along the day mode: the first `n_learn` days and the rest.
pub fn split_learn_predict(x: &Tensor3, n_learn: usize) -> Result<(Tensor3, Tensor3)> {
    let (f, t, n) = x.dims();
    if n_learn == 0 || n_learn >= n {
        return Err(Error::InvalidOption(format!(
            "n_learn {n_learn} out of range 1..{n}"
        )));
    }
    // Day slices are contiguous in storage, so the split is a single cut.
    let cut = f * t * n_learn;
    let learn = Tensor3::new((f, t, n_learn), x.data()[..cut].to_vec())?;
    let test = Tensor3::new((f, t, n - n_learn), x.data()[cut..].to_vec())?;
    Ok((learn, test))
}

/// Joins two tensors along the day mode. Inverse of `split_learn_predict`.
pub fn concat_days(front: &Tensor3, back: &Tensor3) -> Result<Tensor3> {
    let (f, t, n1) = front.dims();
    let (f2, t2, n2) = back.dims();
    if (f, t) != (f2, t2) {
        return Err(Error::DimMismatch {
            expected: front.dims(),
            got: back.dims(),
        });
    }
    let mut data = Vec::with_capacity(front.len() + back.len());
    data.extend_from_slice(front.data());
    data.extend_from_slice(back.data());
    Tensor3::new((f, t, n1 + n2), data)
}

/// Normalized prediction error: the ratio of the summed squared residuals to
/// the summed squared true entries. Note there is no square root; predicting
/// twice the truth scores exactly 1.
pub fn prediction_error(x_true: &Tensor3, x_pred: &Tensor3) -> Result<f64> {
    if x_true.dims() != x_pred.dims() {
        return Err(Error::DimMismatch {
            expected: x_true.dims(),
            got: x_pred.dims(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&v, &w) in x_true.data().iter().zip(x_pred.data()) {
        num += (v - w) * (v - w);
        den += v * v;
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(num / den)
}

/// Predicts `cfg.n_predict` future days from a fully observed learning
/// tensor. See the module docs for the two modes.
pub fn predict_tensor(x_learn: &Tensor3, cfg: &PipelineConfig) -> Result<PredictionReport> {
    cfg.validate(x_learn.dims())?;
    let start = Instant::now();
    match cfg.mode {
        PredictionMode::Cpd => {
            let t0 = Instant::now();
            let (fs, _) = cp_als(x_learn, cfg.rank, &cfg.als)?;
            let cpd_seconds = t0.elapsed().as_secs_f64();
            finish_factor_forecast(fs, None, cfg, cpd_seconds, start)
        }
        PredictionMode::Raw => {
            let (f, t, _) = x_learn.dims();
            let t1 = Instant::now();
            let fibers: Vec<Result<Vec<f64>>> = (0..f * t)
                .into_par_iter()
                .map(|i| {
                    let series = fiber(x_learn, i);
                    forecast_series(&series, cfg.n_predict, cfg, i as u64)
                })
                .collect();
            let mut forecasts = Vec::with_capacity(f * t);
            for row in fibers {
                forecasts.push(row?);
            }
            let learn_seconds = t1.elapsed().as_secs_f64();
            let predicted =
                Tensor3::from_fn((f, t, cfg.n_predict), |fi, ti, k| forecasts[fi + f * ti][k])?;
            Ok(PredictionReport {
                predicted,
                e_p: None,
                cpd_seconds: 0.0,
                learn_seconds,
                total_seconds: start.elapsed().as_secs_f64(),
                factors: None,
                completion_history: None,
            })
        }
    }
}

/// Completes a learning tensor with missing entries, then forecasts from the
/// completion's own factors. With a full mask this reduces to exactly the
/// computation `predict_tensor` performs. Factor-space mode only.
pub fn joint_complete_predict(
    x_incomplete: &Tensor3,
    m: &MaskTensor3,
    cfg: &PipelineConfig,
) -> Result<PredictionReport> {
    cfg.validate(x_incomplete.dims())?;
    if cfg.mode != PredictionMode::Cpd {
        return Err(Error::InvalidOption(
            "joint completion forecasts factor columns; raw mode has none".into(),
        ));
    }
    let start = Instant::now();
    let mut opts = cfg.completion.clone().unwrap_or_default();
    opts.rank = cfg.rank;
    opts.als = cfg.als.clone();

    let t0 = Instant::now();
    let result = complete(x_incomplete, m, &opts)?;
    let cpd_seconds = t0.elapsed().as_secs_f64();
    finish_factor_forecast(result.factors, Some(result.history), cfg, cpd_seconds, start)
}

/// Splits, predicts, and scores the prediction against the held-out days.
pub fn predict_and_score(x: &Tensor3, cfg: &PipelineConfig) -> Result<PredictionReport> {
    let (learn, test) = checked_split(x, cfg)?;
    let mut report = predict_tensor(&learn, cfg)?;
    report.e_p = Some(prediction_error(&test, &report.predicted)?);
    Ok(report)
}

/// Splits, completes the learning part under `m`, predicts, and scores.
/// The mask covers the learning days only.
pub fn joint_complete_predict_and_score(
    x: &Tensor3,
    m: &MaskTensor3,
    cfg: &PipelineConfig,
) -> Result<PredictionReport> {
    let (learn, test) = checked_split(x, cfg)?;
    let mut report = joint_complete_predict(&learn, m, cfg)?;
    report.e_p = Some(prediction_error(&test, &report.predicted)?);
    Ok(report)
}

fn checked_split(x: &Tensor3, cfg: &PipelineConfig) -> Result<(Tensor3, Tensor3)> {
    let n = x.dims().2;
    if cfg.n_learn + cfg.n_predict != n {
        return Err(Error::InvalidOption(format!(
            "n_learn {} + n_predict {} must equal tensor depth {n}",
            cfg.n_learn, cfg.n_predict
        )));
    }
    split_learn_predict(x, cfg.n_learn)
}

/// Forecasts every column of the temporal factor and reconstructs the
/// predicted block. Shared by the plain and joint paths.
fn finish_factor_forecast(
    fs: FactorSet,
    completion_history: Option<Vec<CompletionRecord>>,
    cfg: &PipelineConfig,
    cpd_seconds: f64,
    start: Instant,
) -> Result<PredictionReport> {
    let r = fs.rank();
    let n_learn = fs.c().nrows();

    let t1 = Instant::now();
    let columns: Vec<Result<Vec<f64>>> = (0..r)
        .into_par_iter()
        .map(|j| {
            let series: Vec<f64> = fs.c().column(j).iter().copied().collect();
            forecast_series(&series, cfg.n_predict, cfg, j as u64)
        })
        .collect();
    let mut forecasts = Vec::with_capacity(r);
    for col in columns {
        forecasts.push(col?);
    }
    let learn_seconds = t1.elapsed().as_secs_f64();

    let c_pred = Mat::from_fn(cfg.n_predict, r, |i, j| forecasts[j][i]);
    let predicted = fs.with_temporal(c_pred.clone())?.reconstruct();
    let c_full = Mat::from_fn(n_learn + cfg.n_predict, r, |i, j| {
        if i < n_learn {
            fs.c()[(i, j)]
        } else {
            c_pred[(i - n_learn, j)]
        }
    });
    let factors = fs.with_temporal(c_full)?;

    Ok(PredictionReport {
        predicted,
        e_p: None,
        cpd_seconds,
        learn_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        factors: Some(factors),
        completion_history,
    })
}

/// Trains the configured predictor on one series and forecasts. `task` is
/// the column or fiber index; it offsets the seed so parallel tasks draw
/// independent weights deterministically.
fn forecast_series(
    series: &[f64],
    horizon: usize,
    cfg: &PipelineConfig,
    task: u64,
) -> Result<Vec<f64>> {
    match cfg.predictor {
        PredictorKind::Lstm => {
            let mut train = cfg.train.clone();
            train.seed = train.seed.wrapping_add(task);
            let mut p = LstmPredictor::new(train);
            p.fit(series)?;
            p.forecast(horizon)
        }
        PredictorKind::Ar => {
            let mut p = ArPredictor::new(cfg.ar_order);
            p.fit(series)?;
            p.forecast(horizon)
        }
    }
}

/// Mode-3 fiber `i` (= f + F*t) as a contiguous series over days.
fn fiber(x: &Tensor3, i: usize) -> Vec<f64> {
    let (f, t, n) = x.dims();
    let stride = f * t;
    (0..n).map(|day| x.data()[i + stride * day]).collect()
}
