//! Stacked univariate LSTM trained from scratch by full-sequence
//! backpropagation through time with ADAM, used to forecast temporal factor
//! columns one step at a time.
//!
//! The model standardizes each series before training and stores the affine
//! parameters, so forecasts come back in the original scale. One ADAM step
//! runs per epoch over the whole sequence; factor columns are short, so
//! there is no batching or windowing.

use crate::error::{Error, Result};
use crate::tensor::Mat;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One gate's parameters: input weights, recurrent weights, bias. The same
/// struct doubles as the gradient accumulator for that gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    w: Mat,
    u: Mat,
    b: DVector<f64>,
}

impl GateWeights {
    fn zeros(width: usize, in_dim: usize) -> Self {
        GateWeights {
            w: Mat::zeros(width, in_dim),
            u: Mat::zeros(width, width),
            b: DVector::zeros(width),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LstmLayer {
    input: GateWeights,
    forget: GateWeights,
    output: GateWeights,
    candidate: GateWeights,
}

impl LstmLayer {
    fn zeros(width: usize, in_dim: usize) -> Self {
        LstmLayer {
            input: GateWeights::zeros(width, in_dim),
            forget: GateWeights::zeros(width, in_dim),
            output: GateWeights::zeros(width, in_dim),
            candidate: GateWeights::zeros(width, in_dim),
        }
    }

    fn gates(&self) -> [&GateWeights; 4] {
        [&self.input, &self.forget, &self.output, &self.candidate]
    }

    fn gates_mut(&mut self) -> [&mut GateWeights; 4] {
        [
            &mut self.input,
            &mut self.forget,
            &mut self.output,
            &mut self.candidate,
        ]
    }
}

/// Per-series affine standardization, inverted at forecast time.
/// A zero-variance series keeps scale 1 so the transform stays invertible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn fit(series: &[f64]) -> Self {
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Standardization { mean, scale }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_layers: usize,
    pub layer_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_layers: 4,
            layer_width: 4,
            learning_rate: 0.05,
            epochs: 300,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.layer_width == 0 {
            return Err(Error::InvalidOption(
                "num_layers and layer_width must be >= 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidOption("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidOption(
                "learning_rate must be finite and > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Stacked LSTM with a scalar affine readout of the top hidden state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    layers: Vec<LstmLayer>,
    readout_w: DVector<f64>,
    readout_b: f64,
    norm: Standardization,
}

/// Hidden and cell state per layer.
#[derive(Clone, Debug)]
pub struct LstmStates {
    h: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
}

impl LstmStates {
    pub fn zeros(model: &LstmModel) -> Self {
        let width = model.layer_width();
        LstmStates {
            h: vec![DVector::zeros(width); model.num_layers()],
            c: vec![DVector::zeros(width); model.num_layers()],
        }
    }

    pub fn hidden(&self) -> &[DVector<f64>] {
        &self.h
    }

    pub fn cell(&self) -> &[DVector<f64>] {
        &self.c
    }
}

struct LayerCache {
    x: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    i: DVector<f64>,
    f: DVector<f64>,
    o: DVector<f64>,
    g: DVector<f64>,
    tanh_c: DVector<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LstmModel {
    /// Weights drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)] where
    /// fan_in is the column count of the matrix being filled (layer width
    /// for biases and the readout). Draw order: per layer, gates in order
    /// input, forget, output, candidate, each as w then u then b, column
    /// major; then the readout. The forget bias is set to 1 and consumes no
    /// draws.
    fn init(cfg: &TrainConfig, norm: Standardization) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let width = cfg.layer_width;
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut m = Mat::zeros(rows, cols);
            for v in m.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
            m
        };
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let in_dim = if l == 0 { 1 } else { width };
            let gate = |forget: bool, uniform: &mut dyn FnMut(usize, usize, usize) -> Mat| {
                let w = uniform(width, in_dim, in_dim);
                let u = uniform(width, width, width);
                let b = if forget {
                    DVector::from_element(width, 1.0)
                } else {
                    DVector::from_column_slice(uniform(width, 1, width).as_slice())
                };
                GateWeights { w, u, b }
            };
            layers.push(LstmLayer {
                input: gate(false, &mut uniform),
                forget: gate(true, &mut uniform),
                output: gate(false, &mut uniform),
                candidate: gate(false, &mut uniform),
            });
        }
        let readout_w =
            DVector::from_column_slice(uniform(width, 1, width).as_slice());
        let readout_b = uniform(1, 1, width)[(0, 0)];
        LstmModel {
            layers,
            readout_w,
            readout_b,
            norm,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_width(&self) -> usize {
        self.readout_w.len()
    }

    pub fn standardization(&self) -> Standardization {
        self.norm
    }

    pub fn all_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }

    /// Every trainable parameter in the documented canonical order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for gate in layer.gates() {
                out.extend(gate.w.iter());
                out.extend(gate.u.iter());
                out.extend(gate.b.iter());
            }
        }
        out.extend(self.readout_w.iter());
        out.push(self.readout_b);
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidOption(format!(
                "parameter vector has length {}, model needs {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            for gate in layer.gates_mut() {
                for v in gate.w.iter_mut() {
                    *v = *it.next().unwrap();
                }
                for v in gate.u.iter_mut() {
                    *v = *it.next().unwrap();
                }
                for v in gate.b.iter_mut() {
                    *v = *it.next().unwrap();
                }
            }
        }
        for v in self.readout_w.iter_mut() {
            *v = *it.next().unwrap();
        }
        self.readout_b = *it.next().unwrap();
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let width = self.layer_width();
        let per_gate = |in_dim: usize| width * in_dim + width * width + width;
        self.layers
            .iter()
            .enumerate()
            .map(|(l, _)| 4 * per_gate(if l == 0 { 1 } else { width }))
            .sum::<usize>()
            + width
            + 1
    }

    /// Advance every layer by one step and return the readout. Operates in
    /// the model's standardized input domain.
    fn step(&self, states: &mut LstmStates, x_in: f64, mut cache: Option<&mut Vec<LayerCache>>) -> f64 {
        let mut x = DVector::from_element(1, x_in);
        for (l, layer) in self.layers.iter().enumerate() {
            let h_prev = std::mem::take(&mut states.h[l]);
            let c_prev = std::mem::take(&mut states.c[l]);
            let pre = |g: &GateWeights| &g.w * &x + &g.u * &h_prev + &g.b;
            let i = pre(&layer.input).map(sigmoid);
            let f = pre(&layer.forget).map(sigmoid);
            let o = pre(&layer.output).map(sigmoid);
            let g = pre(&layer.candidate).map(f64::tanh);
            let c = f.component_mul(&c_prev) + i.component_mul(&g);
            let tanh_c = c.map(f64::tanh);
            let h = o.component_mul(&tanh_c);
            if let Some(caches) = cache.as_deref_mut() {
                caches.push(LayerCache {
                    x: x.clone(),
                    h_prev,
                    c_prev,
                    i,
                    f,
                    o,
                    g,
                    tanh_c,
                });
            }
            states.h[l] = h.clone();
            states.c[l] = c;
            x = h;
        }
        self.readout_w.dot(&x) + self.readout_b
    }
}

/// Runs the model over a sequence (standardized domain), returning one
/// one-step-ahead output per input and the final layer states.
pub fn lstm_forward(model: &LstmModel, sequence: &[f64]) -> Result<(Vec<f64>, LstmStates)> {
    if sequence.is_empty() {
        return Err(Error::EmptyInput("sequence"));
    }
    if !model.all_finite() {
        return Err(Error::NonFinite("model parameters"));
    }
    let mut states = LstmStates::zeros(model);
    let outputs = sequence
        .iter()
        .map(|&x| model.step(&mut states, x, None))
        .collect();
    Ok((outputs, states))
}

/// Mean squared one-step-ahead error and its gradient with respect to every
/// parameter, flattened in the same order as [`LstmModel::flat_params`].
/// Inputs and targets are taken as already standardized.
pub fn loss_and_gradient(
    model: &LstmModel,
    inputs: &[f64],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("inputs"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::ColumnMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    let steps = inputs.len();
    let num_layers = model.num_layers();
    let width = model.layer_width();

    let mut states = LstmStates::zeros(model);
    let mut caches: Vec<Vec<LayerCache>> = Vec::with_capacity(steps);
    let mut outputs = Vec::with_capacity(steps);
    for &x in inputs {
        let mut step_cache = Vec::with_capacity(num_layers);
        outputs.push(model.step(&mut states, x, Some(&mut step_cache)));
        caches.push(step_cache);
    }
    let inv_n = 1.0 / steps as f64;
    let loss = outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| (y - t) * (y - t))
        .sum::<f64>()
        * inv_n;

    let mut grad_layers: Vec<LstmLayer> = (0..num_layers)
        .map(|l| LstmLayer::zeros(width, if l == 0 { 1 } else { width }))
        .collect();
    let mut grad_readout_w = DVector::zeros(width);
    let mut grad_readout_b = 0.0;
    let mut dh_next = vec![DVector::zeros(width); num_layers];
    let mut dc_next = vec![DVector::zeros(width); num_layers];

    for t in (0..steps).rev() {
        let dy = 2.0 * (outputs[t] - targets[t]) * inv_n;
        let top = &caches[t][num_layers - 1];
        grad_readout_w += top.o.component_mul(&top.tanh_c) * dy;
        grad_readout_b += dy;
        let mut dh_above = &model.readout_w * dy;
        for l in (0..num_layers).rev() {
            let cc = &caches[t][l];
            let layer = &model.layers[l];
            let dh = &dh_next[l] + dh_above;

            let d_o = dh.component_mul(&cc.tanh_c);
            let dc = dh
                .component_mul(&cc.o)
                .component_mul(&cc.tanh_c.map(|v| 1.0 - v * v))
                + &dc_next[l];
            let d_i = dc.component_mul(&cc.g);
            let d_f = dc.component_mul(&cc.c_prev);
            let d_g = dc.component_mul(&cc.i);

            let di_pre = d_i.component_mul(&cc.i.map(|v| v * (1.0 - v)));
            let df_pre = d_f.component_mul(&cc.f.map(|v| v * (1.0 - v)));
            let do_pre = d_o.component_mul(&cc.o.map(|v| v * (1.0 - v)));
            let dg_pre = d_g.component_mul(&cc.g.map(|v| 1.0 - v * v));

            dc_next[l] = dc.component_mul(&cc.f);
            dh_next[l] = layer.input.u.transpose() * &di_pre
                + layer.forget.u.transpose() * &df_pre
                + layer.output.u.transpose() * &do_pre
                + layer.candidate.u.transpose() * &dg_pre;
            dh_above = layer.input.w.transpose() * &di_pre
                + layer.forget.w.transpose() * &df_pre
                + layer.output.w.transpose() * &do_pre
                + layer.candidate.w.transpose() * &dg_pre;

            let grads = &mut grad_layers[l];
            for (gate, pre) in grads
                .gates_mut()
                .into_iter()
                .zip([&di_pre, &df_pre, &do_pre, &dg_pre])
            {
                gate.w += pre * cc.x.transpose();
                gate.u += pre * cc.h_prev.transpose();
                gate.b += pre;
            }
        }
    }

    let mut flat = Vec::with_capacity(model.param_count());
    for layer in &grad_layers {
        for gate in layer.gates() {
            flat.extend(gate.w.iter());
            flat.extend(gate.u.iter());
            flat.extend(gate.b.iter());
        }
    }
    flat.extend(grad_readout_w.iter());
    flat.push(grad_readout_b);
    Ok((loss, flat))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    lr: f64,
    step: u64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            lr,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Trains one-step-ahead prediction of the standardized series. One ADAM
/// step per epoch over the full sequence; the loss history records the
/// pre-update loss of every epoch.
pub fn train_lstm(series: &[f64], cfg: &TrainConfig) -> Result<(LstmModel, Vec<f64>)> {
    cfg.validate()?;
    if series.len() < 3 {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: 3,
        });
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("training series"));
    }
    let norm = Standardization::fit(series);
    let std_series: Vec<f64> = series.iter().map(|&v| norm.apply(v)).collect();
    let inputs = &std_series[..std_series.len() - 1];
    let targets = &std_series[1..];

    let mut model = LstmModel::init(cfg, norm);
    let mut adam = Adam::new(model.param_count(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (loss, grads) = loss_and_gradient(&model, inputs, targets)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(loss);
        let mut params = model.flat_params();
        adam.update(&mut params, &grads);
        model
            .set_flat_params(&params)
            .expect("parameter count is stable");
    }
    Ok((model, history))
}

/// Runs the model over the standardized context, then feeds each one-step
/// prediction back as the next input, `horizon` times. Outputs are returned
/// in the original scale of the training series.
pub fn forecast(model: &LstmModel, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(Error::EmptyInput("context"));
    }
    if horizon == 0 {
        return Err(Error::InvalidOption("horizon must be >= 1".into()));
    }
    if !model.all_finite() {
        return Err(Error::NonFinite("model parameters"));
    }
    let mut states = LstmStates::zeros(model);
    let mut y = 0.0;
    for &v in context {
        y = model.step(&mut states, model.norm.apply(v), None);
    }
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        if !y.is_finite() {
            return Err(Error::NonFinite("forecast output"));
        }
        out.push(model.norm.invert(y));
        y = model.step(&mut states, y, None);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg(num_layers: usize, layer_width: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            num_layers,
            layer_width,
            seed,
            ..TrainConfig::default()
        }
    }

    fn fresh_model(cfg: &TrainConfig) -> LstmModel {
        LstmModel::init(cfg, Standardization { mean: 0.0, scale: 1.0 })
    }

    #[test]
    fn zero_weights_output_readout_bias() {
        let mut model = fresh_model(&small_cfg(3, 4, 0));
        let n = model.param_count();
        let mut params = vec![0.0; n];
        params[n - 1] = 2.5;
        model.set_flat_params(&params).unwrap();
        let (outputs, states) = lstm_forward(&model, &[0.3, -1.2, 4.0]).unwrap();
        assert_eq!(outputs, vec![2.5, 2.5, 2.5]);
        for l in 0..3 {
            assert!(states.hidden()[l].iter().all(|v| *v == 0.0));
            assert!(states.cell()[l].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_step_sequence_matches_prefix_of_longer_run() {
        let model = fresh_model(&small_cfg(2, 3, 9));
        let seq = [0.4, -0.2, 0.9];
        let (one, _) = lstm_forward(&model, &seq[..1]).unwrap();
        let (full, _) = lstm_forward(&model, &seq).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], full[0]);
    }

    #[test]
    fn forward_rejects_empty_sequence_and_broken_model() {
        let mut model = fresh_model(&small_cfg(1, 2, 0));
        assert!(matches!(
            lstm_forward(&model, &[]).unwrap_err(),
            Error::EmptyInput(_)
        ));
        let mut params = model.flat_params();
        params[0] = f64::NAN;
        model.set_flat_params(&params).unwrap();
        assert!(matches!(
            lstm_forward(&model, &[1.0]).unwrap_err(),
            Error::NonFinite(_)
        ));
    }

    fn finite_difference_check(model: &LstmModel, inputs: &[f64], targets: &[f64]) {
        let (_, analytic) = loss_and_gradient(model, inputs, targets).unwrap();
        let params = model.flat_params();
        let mut probe = model.clone();
        for k in 0..params.len() {
            let h = 1e-5;
            let mut plus = params.clone();
            plus[k] += h;
            probe.set_flat_params(&plus).unwrap();
            let (lp, _) = loss_and_gradient(&probe, inputs, targets).unwrap();
            let mut minus = params.clone();
            minus[k] -= h;
            probe.set_flat_params(&minus).unwrap();
            let (lm, _) = loss_and_gradient(&probe, inputs, targets).unwrap();
            let fd = (lp - lm) / (plus[k] - minus[k]);
            let rel = (analytic[k] - fd).abs() / (analytic[k].abs() + fd.abs()).max(1e-6);
            assert!(
                rel <= 1e-4,
                "param {k}: analytic {} vs finite difference {fd} (rel {rel})",
                analytic[k]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_small_model() {
        let model = fresh_model(&small_cfg(1, 2, 3));
        let seq = [0.5, -0.3, 0.8, 0.1, -0.6];
        finite_difference_check(&model, &seq[..4], &seq[1..]);
    }

    #[test]
    fn gradient_matches_finite_differences_on_two_layer_model() {
        let model = fresh_model(&small_cfg(2, 3, 17));
        let seq = [0.2, 0.9, -0.5, -0.1, 0.4, 0.7];
        finite_difference_check(&model, &seq[..5], &seq[1..]);
    }

    #[test]
    fn constant_series_trains_to_constant_forecast() {
        let series = vec![5.0; 80];
        let (model, _) = train_lstm(&series, &small_cfg(2, 3, 1)).unwrap();
        assert_eq!(model.standardization().scale, 1.0);
        assert_eq!(model.standardization().mean, 5.0);
        let out = forecast(&model, &series, 5).unwrap();
        for v in out {
            assert!((v - 5.0).abs() <= 1e-2, "forecast {v}");
        }
    }

    #[test]
    fn sine_series_loss_is_finite_and_improves() {
        let series: Vec<f64> = (0..100)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin())
            .collect();
        let (_, history) = train_lstm(&series, &TrainConfig::default()).unwrap();
        assert_eq!(history.len(), 300);
        assert!(history.iter().all(|l| l.is_finite()));
        assert!(
            history.last().unwrap() < &history[0],
            "loss {} -> {}",
            history[0],
            history.last().unwrap()
        );
    }

    #[test]
    fn fixed_seed_gives_bitwise_identical_training() {
        let series: Vec<f64> = (0..40).map(|t| ((t * t) % 17) as f64).collect();
        let cfg = TrainConfig {
            epochs: 50,
            ..small_cfg(2, 3, 77)
        };
        let (m1, h1) = train_lstm(&series, &cfg).unwrap();
        let (m2, h2) = train_lstm(&series, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1.flat_params(), m2.flat_params());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let series: Vec<f64> = (0..20).map(|t| (t as f64).sin()).collect();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 10,
            ..small_cfg(1, 2, 0)
        };
        let err = train_lstm(&series, &cfg).unwrap_err();
        assert!(err.is_divergence(), "unexpected error {err}");
        assert!(matches!(err, Error::TrainingDiverged { .. }));
    }

    #[test]
    fn horizon_one_equals_last_forward_output() {
        let series: Vec<f64> = (0..30).map(|t| 10.0 + (t as f64 * 0.3).sin() * 4.0).collect();
        let cfg = TrainConfig {
            epochs: 40,
            ..small_cfg(2, 3, 5)
        };
        let (model, _) = train_lstm(&series, &cfg).unwrap();
        let norm = model.standardization();
        let std_ctx: Vec<f64> = series.iter().map(|&v| norm.apply(v)).collect();
        let (outputs, _) = lstm_forward(&model, &std_ctx).unwrap();
        let fc = forecast(&model, &series, 1).unwrap();
        assert_eq!(fc.len(), 1);
        assert_eq!(fc[0], norm.invert(*outputs.last().unwrap()));
    }

    #[test]
    fn forecast_length_contract_at_pipeline_scale() {
        let series: Vec<f64> = (0..80).map(|t| (t % 7) as f64 + 1.0).collect();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let (model, _) = train_lstm(&series, &cfg).unwrap();
        let out = forecast(&model, &series, 20).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(matches!(
            train_lstm(&[1.0, 2.0], &TrainConfig::default()).unwrap_err(),
            Error::SeriesTooShort { len: 2, needed: 3 }
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let series = vec![1.0, 2.0, 3.0, 4.0];
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { num_layers: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(
                train_lstm(&series, &cfg).unwrap_err(),
                Error::InvalidOption(_)
            ));
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let model = fresh_model(&small_cfg(3, 4, 21));
        let params = model.flat_params();
        assert_eq!(params.len(), model.param_count());
        let mut other = fresh_model(&small_cfg(3, 4, 22));
        other.set_flat_params(&params).unwrap();
        assert_eq!(other.flat_params(), params);
        assert!(other.set_flat_params(&params[1..]).is_err());
    }

    #[test]
    fn json_round_trip_preserves_model_exactly() {
        let series: Vec<f64> = (0..30).map(|t| (t as f64 * 0.7).cos() * 3.0 + 6.0).collect();
        let cfg = TrainConfig {
            epochs: 20,
            ..small_cfg(2, 2, 13)
        };
        let (model, _) = train_lstm(&series, &cfg).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: LstmModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(
            forecast(&back, &series, 7).unwrap(),
            forecast(&model, &series, 7).unwrap()
        );
    }

    /// Gate activations stay strictly inside their codomains when weights
    /// and inputs are bounded enough to avoid f64 saturation.
    #[test]
    fn gate_ranges_hold_for_bounded_models() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(99);
        for _ in 0..20 {
            let mut model = fresh_model(&small_cfg(2, 3, 0));
            let params: Vec<f64> = (0..model.param_count())
                .map(|_| rng.random_range(-0.7..0.7))
                .collect();
            model.set_flat_params(&params).unwrap();
            let seq: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut states = LstmStates::zeros(&model);
            for &x in &seq {
                let mut cache = Vec::new();
                model.step(&mut states, x, Some(&mut cache));
                for layer in &cache {
                    for gate in [&layer.i, &layer.f, &layer.o] {
                        assert!(gate.iter().all(|v| *v > 0.0 && *v < 1.0));
                    }
                    assert!(layer.g.iter().all(|v| *v > -1.0 && *v < 1.0));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradient_check_property(
            seed in 0u64..1000,
            len in 3usize..8,
            scale in 0.05f64..0.6,
        ) {
            let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(seed);
            let mut model = fresh_model(&small_cfg(1 + (seed % 2) as usize, 2, seed));
            let params: Vec<f64> = (0..model.param_count())
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            model.set_flat_params(&params).unwrap();
            let seq: Vec<f64> = (0..=len).map(|_| rng.random_range(-2.0..2.0)).collect();
            finite_difference_check(&model, &seq[..len], &seq[1..]);
        }

        #[test]
        fn standardization_round_trip(
            values in prop::collection::vec(-1e6f64..1e6, 2..40),
            probe in -1e6f64..1e6,
        ) {
            let norm = Standardization::fit(&values);
            let back = norm.invert(norm.apply(probe));
            prop_assert!((back - probe).abs() <= 1e-12 * probe.abs().max(1.0));
        }
    }
}
