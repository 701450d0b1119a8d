//! Feed-forward denoiser mapping measured frequencies to ideal probabilities.
//!
//! Architecture `d² → 400 → 200 → d²` with ReLU hidden layers, inverted
//! dropout after the first hidden layer and a softmax output. Training
//! minimizes the mean KL divergence with RMSprop and early stopping on a
//! validation set. Gradients are computed by explicit backpropagation.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::ProbDistribution;
use crate::rng::child_rng;
use crate::sampler::Dataset;

pub const DEFAULT_HIDDEN: [usize; 2] = [400, 200];
pub const DEFAULT_DROPOUT: f64 = 0.2;
const PREDICT_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.len()) }
    }

    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    pub fn cols(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    pub dropout_p: f64,
}

/// Same shapes as the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl NetworkParams {
    /// Layer widths, e.g. `[36, 400, 200, 36]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].cols()];
        w.extend(self.layers.iter().map(|l| l.rows()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows())
    }

    pub fn zeros(widths: &[usize], dropout_p: f64) -> Self {
        let layers = widths
            .windows(2)
            .map(|p| Layer { w: Array2::zeros((p[1], p[0])), b: Array1::zeros(p[1]) })
            .collect();
        Self { layers, dropout_p }
    }

    /// He-uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(widths: &[usize], dropout_p: f64, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|p| {
                let limit = (6.0 / p[0] as f64).sqrt();
                let w = Array2::from_shape_fn((p[1], p[0]), |_| rng.random_range(-limit..limit));
                Layer { w, b: Array1::zeros(p[1]) }
            })
            .collect();
        Self { layers, dropout_p }
    }

    pub fn default_for_dim(dim: usize, rng: &mut impl Rng) -> Self {
        let d2 = dim * dim;
        Self::he_uniform(&[d2, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], d2], DEFAULT_DROPOUT, rng)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].rows() != pair[1].cols() {
                return Err(Error::DimensionMismatch { expected: pair[0].rows(), got: pair[1].cols() });
            }
        }
        for l in &self.layers {
            if l.b.len() != l.rows() {
                return Err(Error::DimensionMismatch { expected: l.rows(), got: l.b.len() });
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        if !self.is_finite() {
            return Err(Error::Numerical("non-finite network parameters".into()));
        }
        Ok(())
    }
}

/// `x W^T + b` for a batch `x` (rows are samples).
fn affine(x: &ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = x.dot(&layer.w.t());
    z += &layer.b;
    z
}

fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

/// Row-wise log-softmax.
fn log_softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Scaled inverted-dropout mask: entries `0` or `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Activations recorded for backpropagation.
struct Trace {
    /// Post-activation (and post-dropout) outputs of each hidden layer.
    hidden: Vec<Array2<f64>>,
    /// Mask applied after the first hidden layer, if any.
    mask: Option<Array2<f64>>,
    log_probs: Array2<f64>,
}

fn forward_trace(params: &NetworkParams, x: &ArrayView2<f64>, mask: Option<Array2<f64>>) -> Trace {
    let n = params.layers.len();
    let mut hidden = Vec::with_capacity(n - 1);
    let mut a = x.to_owned();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = affine(&a.view(), layer);
        if k + 1 == n {
            return Trace { hidden, mask, log_probs: log_softmax(&z) };
        }
        relu_inplace(&mut z);
        if k == 0 {
            if let Some(m) = &mask {
                z *= m;
            }
        }
        hidden.push(z.clone());
        a = z;
    }
    unreachable!("network has at least one layer")
}

fn check_batch(params: &NetworkParams, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), got: x.ncols() });
    }
    Ok(())
}

/// Output distribution for one input.
pub fn forward<R: Rng + ?Sized>(
    params: &NetworkParams,
    input: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<ProbDistribution> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    check_batch(params, &x)?;
    if input.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidDistribution("network inputs must be finite and non-negative".into()));
    }
    let mask = match mode {
        Mode::Train if params.layers.len() > 1 => {
            Some(dropout_mask(1, params.layers[0].rows(), params.dropout_p, rng))
        }
        _ => None,
    };
    let trace = forward_trace(params, &x, mask);
    softmax_row(trace.log_probs.row(0).to_vec())
}

fn softmax_row(log_probs: Vec<f64>) -> Result<ProbDistribution> {
    let p: Vec<f64> = log_probs.into_iter().map(f64::exp).collect();
    ProbDistribution::from_weights(p)
}

/// `Σ t log(t / p)` with `0 log 0 = 0`.
pub fn kl_loss(target: &ProbDistribution, predicted: &ProbDistribution) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), got: predicted.len() });
    }
    let mut acc = 0.0;
    for (&t, &p) in target.values().iter().zip(predicted.values()) {
        if t > 0.0 {
            if p <= 0.0 {
                return Err(Error::DivergenceInfinite(t));
            }
            acc += t * (t / p).ln();
        }
    }
    Ok(acc)
}

/// Mean KL over a batch given log-probabilities.
fn batch_kl(targets: &ArrayView2<f64>, log_probs: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for (t_row, lp_row) in targets.rows().into_iter().zip(log_probs.rows()) {
        for (&t, &lp) in t_row.iter().zip(lp_row.iter()) {
            if t > 0.0 {
                acc += t * (t.ln() - lp);
            }
        }
    }
    acc / targets.nrows() as f64
}

/// Mean batch KL with an explicit dropout mask (`None` = no dropout).
pub fn batch_loss(
    params: &NetworkParams,
    inputs: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    mask: Option<&Array2<f64>>,
) -> Result<f64> {
    check_batch(params, inputs)?;
    let trace = forward_trace(params, inputs, mask.cloned());
    Ok(batch_kl(targets, &trace.log_probs))
}

/// Mean batch KL and its exact gradient for a fixed dropout mask.
pub fn backward(
    params: &NetworkParams,
    inputs: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    mask: Option<&Array2<f64>>,
) -> Result<(f64, Gradients)> {
    check_batch(params, inputs)?;
    if targets.nrows() != inputs.nrows() || targets.ncols() != params.output_dim() {
        return Err(Error::DimensionMismatch { expected: params.output_dim(), got: targets.ncols() });
    }
    let trace = forward_trace(params, inputs, mask.cloned());
    let loss = batch_kl(targets, &trace.log_probs);
    let batch = inputs.nrows() as f64;

    // Softmax + KL: dL/dz = (p - t) / B.
    let mut delta = trace.log_probs.mapv(f64::exp);
    delta -= targets;
    delta /= batch;

    let n = params.layers.len();
    let mut grads: Vec<Layer> = params.layers.iter().map(Layer::zeros_like).collect();
    for k in (0..n).rev() {
        let a_prev: ArrayView2<f64> = if k == 0 { inputs.view() } else { trace.hidden[k - 1].view() };
        grads[k].w = delta.t().dot(&a_prev);
        grads[k].b = delta.sum_axis(Axis(0));
        if k == 0 {
            break;
        }
        let mut back = delta.dot(&params.layers[k].w);
        // ReLU gate: the stored activation is zero exactly where the unit was
        // inactive or dropped; dropped units also have a zero mask entry.
        let act = &trace.hidden[k - 1];
        if k == 1 {
            if let Some(m) = &trace.mask {
                back *= m;
            }
        }
        ndarray::Zip::from(&mut back).and(act).for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        delta = back;
    }
    Ok((loss, Gradients { layers: grads }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub v: Vec<Layer>,
    pub alpha: f64,
    pub eta: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, alpha: f64, eta: f64, epsilon: f64) -> Self {
        Self { v: params.layers.iter().map(Layer::zeros_like).collect(), alpha, eta, epsilon }
    }
}

/// `v ← αv + (1-α)g²; θ ← θ - ηg / (√v + ε)`.
pub fn rmsprop_step(params: &mut NetworkParams, grads: &Gradients, state: &mut OptimizerState) {
    let (alpha, eta, eps) = (state.alpha, state.eta, state.epsilon);
    for ((layer, g), v) in params.layers.iter_mut().zip(&grads.layers).zip(&mut state.v) {
        ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut v.w).for_each(|theta, &g, v| {
            *v = alpha * *v + (1.0 - alpha) * g * g;
            *theta -= eta * g / (v.sqrt() + eps);
        });
        ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut v.b).for_each(|theta, &g, v| {
            *v = alpha * *v + (1.0 - alpha) * g * g;
            *theta -= eta * g / (v.sqrt() + eps);
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience_epochs: usize,
    pub max_epochs: usize,
    /// Train / validation / test sizes, taken consecutively from the dataset.
    pub split: (usize, usize, usize),
    pub seed: u64,
    pub eta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub dropout_p: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 40,
            patience_epochs: 100,
            max_epochs: 3000,
            split: (7000, 1500, 2000),
            seed: 0,
            eta: 1e-3,
            alpha: 0.1,
            epsilon: 1e-8,
            dropout_p: DEFAULT_DROPOUT,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if !(self.eta > 0.0) || !(0.0..1.0).contains(&self.alpha) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("eta and epsilon must be positive, alpha in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig("dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    /// Set when training ran to `max_epochs` instead of stopping early.
    pub max_epochs_reached: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch).and_then(|e| e.val_loss)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for e in &self.epochs {
            let val = e.val_loss.map_or(String::new(), |v| v.to_string());
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), val])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inputs (frequencies) and targets (ideal probabilities) as matrices.
#[derive(Clone, Debug)]
pub struct Samples {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Samples {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let k = ds.outcomes().ok_or_else(|| Error::InsufficientData("empty dataset".into()))?;
        let n = ds.len();
        let mut inputs = Array2::zeros((n, k));
        let mut targets = Array2::zeros((n, k));
        for (i, r) in ds.records.iter().enumerate() {
            if r.outcomes() != k {
                return Err(Error::DimensionMismatch { expected: k, got: r.outcomes() });
            }
            inputs.row_mut(i).assign(&Array1::from(r.noisy_freqs.clone()));
            targets.row_mut(i).assign(&Array1::from(r.ideal_probs.values().to_vec()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            inputs: self.inputs.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
        }
    }
}

/// Mean KL over a sample set in inference mode.
pub fn evaluate_loss(params: &NetworkParams, samples: &Samples) -> Result<f64> {
    let mut acc = 0.0;
    let n = samples.len();
    let mut start = 0;
    while start < n {
        let end = (start + PREDICT_CHUNK).min(n);
        let x = samples.inputs.slice(ndarray::s![start..end, ..]);
        let t = samples.targets.slice(ndarray::s![start..end, ..]);
        acc += batch_loss(params, &x, &t, None)? * (end - start) as f64;
        start = end;
    }
    Ok(acc / n as f64)
}

/// Mini-batch RMSprop. With a validation set the best-validation weights are
/// restored and training stops after `patience_epochs` without improvement;
/// without one, the final weights are returned after `max_epochs`.
pub fn train(train: &Samples, val: Option<&Samples>, config: &TrainConfig) -> Result<(NetworkParams, TrainHistory)> {
    config.validate()?;
    if train.len() < config.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} training records is less than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    let k = train.inputs.ncols();
    let mut widths = vec![k];
    widths.extend(config.hidden.iter().copied());
    widths.push(train.targets.ncols());
    let mut params = NetworkParams::he_uniform(&widths, config.dropout_p, &mut child_rng(config.seed, "init", 0));
    let mut opt = OptimizerState::new(&params, config.alpha, config.eta, config.epsilon);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, NetworkParams)> = None;
    let mut early = false;

    for epoch in 0..config.max_epochs {
        let mut shuffle_rng = child_rng(config.seed, "shuffle", epoch as u64);
        let mut dropout_rng = child_rng(config.seed, "dropout", epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);

        let mut loss_acc = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let mask = (params.layers.len() > 1 && config.dropout_p > 0.0)
                .then(|| dropout_mask(chunk.len(), params.layers[0].rows(), config.dropout_p, &mut dropout_rng));
            let (loss, grads) = backward(&params, &batch.inputs.view(), &batch.targets.view(), mask.as_ref())?;
            rmsprop_step(&mut params, &grads, &mut opt);
            loss_acc += loss * chunk.len() as f64;
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!("parameters diverged at epoch {epoch}")));
        }
        let train_loss = loss_acc / train.len() as f64;
        let val_loss = val.map(|v| evaluate_loss(&params, v)).transpose()?;
        epochs.push(EpochRecord { epoch, train_loss, val_loss });

        if let Some(vl) = val_loss {
            let improved = best.as_ref().is_none_or(|(b, _, _)| vl < *b);
            if improved {
                best = Some((vl, epoch, params.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= config.patience_epochs {
                early = true;
                break;
            }
        }
    }

    let stopped_epoch = epochs.len() - 1;
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, stopped_epoch),
    };
    Ok((
        params,
        TrainHistory { epochs, best_epoch, stopped_epoch, max_epochs_reached: !early },
    ))
}

/// Inference-mode predictions, one per input row, order preserved.
pub fn predict_batch(params: &NetworkParams, inputs: &[Vec<f64>]) -> Result<Vec<ProbDistribution>> {
    let k = params.input_dim();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        let mut x = Array2::zeros((chunk.len(), k));
        for (i, row) in chunk.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: row.len() });
            }
            x.row_mut(i).assign(&ArrayView2::from_shape((1, k), row).expect("row").row(0));
        }
        let trace = forward_trace(params, &x.view(), None);
        for row in trace.log_probs.rows() {
            out.push(softmax_row(row.to_vec())?);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    dim: usize,
    layers: Vec<LayerFile>,
    dropout_p: f64,
    #[serde(default)]
    train_config_echo: serde_json::Value,
}

pub fn save_weights(path: &Path, params: &NetworkParams, config: Option<&TrainConfig>) -> Result<()> {
    let k = params.input_dim();
    let dim = (k as f64).sqrt().round() as usize;
    let file = WeightsFile {
        dim,
        layers: params
            .layers
            .iter()
            .map(|l| LayerFile {
                rows: l.rows(),
                cols: l.cols(),
                w: l.w.iter().copied().collect(),
                b: l.b.to_vec(),
            })
            .collect(),
        dropout_p: params.dropout_p,
        train_config_echo: config.map(serde_json::to_value).transpose()?.unwrap_or(serde_json::Value::Null),
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string(&file)?.as_bytes())?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<NetworkParams> {
    let file: WeightsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| {
            let w = Array2::from_shape_vec((l.rows, l.cols), l.w)
                .map_err(|e| Error::InvalidConfig(format!("weights shape: {e}")))?;
            Ok(Layer { w, b: Array1::from(l.b) })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = NetworkParams { layers, dropout_p: file.dropout_p };
    params.validate()?;
    if params.input_dim() != file.dim * file.dim {
        return Err(Error::DimensionMismatch { expected: file.dim * file.dim, got: params.input_dim() });
    }
    Ok(params)
}
