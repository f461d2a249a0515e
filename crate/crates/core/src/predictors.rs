//! Autoregressive baseline and the common fit-then-forecast contract shared
//! by the AR and LSTM predictors.

use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::lstm::{forecast as lstm_forecast, train_lstm, LstmModel, TrainConfig};
use crate::tensor::Mat;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// AR(p) model with intercept: x_t = intercept + sum_j coef[j] * x_{t-1-j}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    coefficients: Vec<f64>,
    intercept: f64,
}

impl ArModel {
    pub fn new(coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidOption("AR order must be >= 1".into()));
        }
        if !coefficients.iter().all(|v| v.is_finite()) || !intercept.is_finite() {
            return Err(Error::NonFinite("AR coefficients"));
        }
        Ok(ArModel {
            coefficients,
            intercept,
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// coefficients()[j] multiplies the value j+1 steps back.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }
}

/// Ordinary least squares over all length-p lag windows, with intercept.
/// Rank-deficient designs get the minimum-norm solution instead of failing.
pub fn ar_fit(series: &[f64], p: usize) -> Result<ArModel> {
    if p == 0 {
        return Err(Error::InvalidOption("AR order must be >= 1".into()));
    }
    if series.len() < 2 * p {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: 2 * p,
        });
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("series"));
    }
    let rows = series.len() - p;
    let design = Mat::from_fn(rows, p + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            series[r + p - c]
        }
    });
    let rhs = DVector::from_fn(rows, |r, _| series[r + p]);
    let beta = lstsq(&design, &rhs)?;
    ArModel::new(beta.as_slice()[1..].to_vec(), beta[0])
}

/// Recursive multi-step forecast, feeding each prediction back as input.
pub fn ar_forecast(model: &ArModel, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let p = model.order();
    if context.len() < p {
        return Err(Error::ContextTooShort {
            len: context.len(),
            needed: p,
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidOption("horizon must be >= 1".into()));
    }
    let mut buf = context[context.len() - p..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut y = model.intercept;
        for (j, coef) in model.coefficients.iter().enumerate() {
            y += coef * buf[buf.len() - 1 - j];
        }
        out.push(y);
        buf.push(y);
    }
    Ok(out)
}

/// Fit once on a series, then forecast past its end. Implementations are
/// deterministic for a fixed configuration and produce exactly `horizon`
/// finite values.
pub trait Predictor {
    fn fit(&mut self, series: &[f64]) -> Result<()>;
    fn forecast(&self, horizon: usize) -> Result<Vec<f64>>;
}

pub struct ArPredictor {
    order: usize,
    fitted: Option<(ArModel, Vec<f64>)>,
}

impl ArPredictor {
    pub fn new(order: usize) -> Self {
        ArPredictor {
            order,
            fitted: None,
        }
    }

    pub fn model(&self) -> Option<&ArModel> {
        self.fitted.as_ref().map(|(m, _)| m)
    }
}

impl Predictor for ArPredictor {
    fn fit(&mut self, series: &[f64]) -> Result<()> {
        let model = ar_fit(series, self.order)?;
        self.fitted = Some((model, series.to_vec()));
        Ok(())
    }

    fn forecast(&self, horizon: usize) -> Result<Vec<f64>> {
        let (model, series) = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::InvalidOption("forecast called before fit".into()))?;
        ar_forecast(model, series, horizon)
    }
}

pub struct LstmPredictor {
    cfg: TrainConfig,
    fitted: Option<(LstmModel, Vec<f64>)>,
}

impl LstmPredictor {
    pub fn new(cfg: TrainConfig) -> Self {
        LstmPredictor { cfg, fitted: None }
    }

    pub fn model(&self) -> Option<&LstmModel> {
        self.fitted.as_ref().map(|(m, _)| m)
    }
}

impl Predictor for LstmPredictor {
    fn fit(&mut self, series: &[f64]) -> Result<()> {
        let (model, _) = train_lstm(series, &self.cfg)?;
        self.fitted = Some((model, series.to_vec()));
        Ok(())
    }

    fn forecast(&self, horizon: usize) -> Result<Vec<f64>> {
        let (model, series) = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::InvalidOption("forecast called before fit".into()))?;
        lstm_forecast(model, series, horizon)
    }
}
