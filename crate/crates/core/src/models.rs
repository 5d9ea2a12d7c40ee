//! A small dense-network engine: ReLU MLPs with softmax cross-entropy,
//! exact reverse-mode gradients over a flat parameter vector.
//!
//! Parameter layout is layer-major: for each layer the weight matrix
//! `W` (`d_in x d_out`, row-major) followed by the bias `b` (`d_out`).
//! The forward pass computes `z = a W + b` per layer.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LeapError, Result};
use crate::rng::RngStream;

/// Hidden-layer widths of the MLP-L family (L counts layers including the
/// input layer).
pub const MLP_ARCHITECTURES: [(&str, &[usize]); 5] = [
    ("mlp-3", &[784, 100, 10]),
    ("mlp-4", &[784, 256, 100, 10]),
    ("mlp-6", &[784, 256, 128, 64, 32, 10]),
    ("mlp-8", &[784, 256, 128, 64, 64, 32, 32, 10]),
    ("mlp-10", &[784, 256, 128, 64, 64, 32, 32, 16, 16, 10]),
];

/// Default weight-variance gain: `Var(W) = gain / fan_in` (He initialization).
pub const DEFAULT_INIT_GAIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, x)`, with derivative 0 at 0.
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SoftmaxCrossEntropy,
}

fn default_init_gain() -> f64 {
    DEFAULT_INIT_GAIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub loss: LossKind,
    /// Weights are drawn from `N(0, init_gain / fan_in)`; biases start at 0.
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

/// Where one layer lives inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlice {
    pub d_in: usize,
    pub d_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl MlpSpec {
    pub fn new(layer_dims: &[usize]) -> Self {
        MlpSpec {
            layer_dims: layer_dims.to_vec(),
            activation: Activation::Relu,
            loss: LossKind::SoftmaxCrossEntropy,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    /// One of the named architectures in [`MLP_ARCHITECTURES`], e.g. `"mlp-3"`.
    pub fn named(name: &str) -> Option<Self> {
        MLP_ARCHITECTURES
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, dims)| MlpSpec::new(dims))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(LeapError::config("model.layer_dims", "need at least input and output dimensions"));
        }
        if let Some(i) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(LeapError::config("model.layer_dims", format!("dimension {i} is zero")));
        }
        if !(self.init_gain.is_finite() && self.init_gain > 0.0) {
            return Err(LeapError::config("model.init_gain", format!("must be > 0, got {}", self.init_gain)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `M = sum(d_in * d_out + d_out)`.
    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layout(&self) -> Vec<LayerSlice> {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let weights = offset..offset + d_in * d_out;
                let bias = weights.end..weights.end + d_out;
                offset = bias.end;
                LayerSlice {
                    d_in,
                    d_out,
                    weights,
                    bias,
                }
            })
            .collect()
    }
}

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-layer `(W, b)` copies.
    pub fn unflatten(&self, spec: &MlpSpec) -> Result<Vec<(Array2<f64>, Array1<f64>)>> {
        check_theta(spec, &self.values)?;
        Ok(spec
            .layout()
            .iter()
            .map(|l| {
                let (w, b) = layer_views(&self.values, l);
                (w.to_owned(), b.to_owned())
            })
            .collect())
    }

    pub fn flatten(layers: &[(Array2<f64>, Array1<f64>)]) -> Self {
        let mut values = Vec::with_capacity(layers.iter().map(|(w, b)| w.len() + b.len()).sum());
        for (w, b) in layers {
            values.extend(w.iter().copied());
            values.extend(b.iter().copied());
        }
        ParamVector { values }
    }
}

/// A mini-batch: one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(LeapError::Usage("batch must contain at least one example".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(LeapError::Contract(format!("{} input rows but {} labels", inputs.nrows(), labels.len())));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn layer_views<'a>(theta: &'a [f64], l: &LayerSlice) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let w = ArrayView2::from_shape((l.d_in, l.d_out), &theta[l.weights.clone()]).expect("layout matches spec");
    let b = ArrayView1::from(&theta[l.bias.clone()]);
    (w, b)
}

fn check_theta(spec: &MlpSpec, theta: &[f64]) -> Result<()> {
    spec.validate()?;
    if theta.len() != spec.param_count() {
        return Err(LeapError::Contract(format!(
            "parameter vector has length {} but the model needs {}",
            theta.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

fn check_batch(spec: &MlpSpec, inputs: &ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if inputs.ncols() != spec.input_dim() {
        return Err(LeapError::Contract(format!(
            "inputs have {} features but the model expects {}",
            inputs.ncols(),
            spec.input_dim()
        )));
    }
    if inputs.nrows() != labels.len() || labels.is_empty() {
        return Err(LeapError::Contract(format!("{} input rows, {} labels", inputs.nrows(), labels.len())));
    }
    let k = spec.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(LeapError::Contract(format!("label {bad} outside [0, {k})")));
    }
    Ok(())
}

/// He-style initialization: `W ~ N(0, init_gain / d_in)`, `b = 0`.
pub fn init_params(spec: &MlpSpec, rng: &mut RngStream) -> Result<ParamVector> {
    spec.validate()?;
    let mut theta = ParamVector::zeros(spec);
    for l in spec.layout() {
        let sd = (spec.init_gain / l.d_in as f64).sqrt();
        for w in &mut theta.values[l.weights] {
            *w = sd * rng.standard_normal();
        }
    }
    Ok(theta)
}

/// Pre-activations of every layer; the last entry is the logits.
fn forward_pass(spec: &MlpSpec, theta: &[f64], inputs: &ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
    let layout = spec.layout();
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(layout.len());
    for (idx, l) in layout.iter().enumerate() {
        let (w, b) = layer_views(theta, l);
        let mut z = match pre.last() {
            None => inputs.dot(&w),
            Some(prev) => prev.mapv(relu).dot(&w),
        };
        z += &b;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(LeapError::numeric(format!("layer {idx}"), "non-finite activation"));
        }
        pre.push(z);
    }
    Ok(pre)
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Row-wise log-softmax. The largest logit contributes exactly 1 to the
/// shifted sum, so the remainder goes through `ln_1p` to keep tiny losses.
fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let top = argmax(row.view());
        let max = row[top];
        let rest: f64 = row.iter().enumerate().filter(|&(j, _)| j != top).map(|(_, &v)| (v - max).exp()).sum();
        let log_norm = rest.ln_1p();
        row.mapv_inplace(|v| (v - max) - log_norm);
    }
    out
}

fn mean_nll(log_probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -log_probs[[i, y]]).sum();
    total / labels.len() as f64
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    pub logits: Array2<f64>,
}

/// Mean softmax cross-entropy over the batch.
pub fn forward_loss(spec: &MlpSpec, theta: &[f64], batch: &Batch) -> Result<ForwardOutput> {
    forward_loss_view(spec, theta, batch.inputs.view(), &batch.labels)
}

pub fn forward_loss_view(spec: &MlpSpec, theta: &[f64], inputs: ArrayView2<f64>, labels: &[usize]) -> Result<ForwardOutput> {
    check_theta(spec, theta)?;
    check_batch(spec, &inputs, labels)?;
    let mut pre = forward_pass(spec, theta, &inputs)?;
    let logits = pre.pop().expect("at least one layer");
    let loss = mean_nll(&log_softmax(&logits), labels);
    Ok(ForwardOutput { loss, logits })
}

/// Gradient of the mean batch loss with respect to every entry of `theta`.
pub fn backward(spec: &MlpSpec, theta: &[f64], batch: &Batch) -> Result<Vec<f64>> {
    Ok(loss_and_grad(spec, theta, batch.inputs.view(), &batch.labels)?.1)
}

/// Loss and gradient in one pass.
pub fn loss_and_grad(spec: &MlpSpec, theta: &[f64], inputs: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_theta(spec, theta)?;
    check_batch(spec, &inputs, labels)?;
    let pre = forward_pass(spec, theta, &inputs)?;
    let layout = spec.layout();
    let n = labels.len() as f64;

    let log_probs = log_softmax(pre.last().expect("at least one layer"));
    let loss = mean_nll(&log_probs, labels);

    // dL/dlogits = (softmax - onehot) / n
    let mut delta = log_probs.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        delta[[i, y]] -= 1.0;
    }
    delta /= n;

    let mut grad = vec![0.0; theta.len()];
    for idx in (0..layout.len()).rev() {
        let l = &layout[idx];
        let activations = if idx == 0 { inputs.to_owned() } else { pre[idx - 1].mapv(relu) };
        let gw = activations.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        grad[l.weights.clone()].copy_from_slice(gw.as_slice().expect("standard layout"));
        grad[l.bias.clone()].copy_from_slice(gb.as_slice().expect("standard layout"));
        if idx > 0 {
            let (w, _) = layer_views(theta, l);
            let mut upstream = delta.dot(&w.t());
            ndarray::Zip::from(&mut upstream)
                .and(&pre[idx - 1])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            delta = upstream;
        }
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(LeapError::numeric(format!("gradient index {i}"), "non-finite gradient"));
    }
    Ok((loss, grad))
}

/// Argmax with ties resolved to the lowest class index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of misclassified examples (argmax of logits, lowest index on ties).
pub fn predict_error_rate(spec: &MlpSpec, theta: &[f64], dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(LeapError::Usage("cannot score an empty dataset".into()));
    }
    check_theta(spec, theta)?;
    const CHUNK: usize = 2048;
    let mut wrong = 0usize;
    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let x = dataset.inputs.slice(s![start..end, ..]);
        let labels = &dataset.labels[start..end];
        check_batch(spec, &x, labels)?;
        let logits = forward_pass(spec, theta, &x)?.pop().expect("at least one layer");
        wrong += logits
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(row, &y)| argmax(row.view()) != y)
            .count();
        start = end;
    }
    Ok(wrong as f64 / n as f64)
}
