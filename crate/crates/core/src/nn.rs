//! Dense feed-forward networks with analytic backpropagation.
//!
//! Parameters live in a single flat vector. Layer ordering is fixed:
//! layer 0 weight, layer 0 bias, layer 1 weight, layer 1 bias, ... where each
//! weight is stored row-major with shape `fan_out x fan_in` (one row per
//! output unit). Hidden layers use ReLU; the output head is chosen per model.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Raw affine outputs.
    Logits,
    /// Row-wise softmax; every output row lies on the probability simplex.
    SoftmaxSimplex,
    /// Single raw output, used by value functions.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

/// Location of one affine layer inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlice {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl ArchSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        output_head: OutputHead,
    ) -> Result<Self> {
        let arch = ArchSpec {
            input_dim,
            hidden_dims,
            output_dim,
            hidden_activation: Activation::Relu,
            output_head,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(FedError::config("input and output dimensions must be positive"));
        }
        if self.output_head == OutputHead::Scalar && self.output_dim != 1 {
            return Err(FedError::config(format!(
                "scalar head requires output_dim 1, got {}",
                self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn layer_slices(&self) -> Vec<LayerSlice> {
        let mut offset = 0;
        self.layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let weight = offset..offset + fan_in * fan_out;
                let bias = weight.end..weight.end + fan_out;
                offset = bias.end;
                LayerSlice {
                    fan_in,
                    fan_out,
                    weight,
                    bias,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    /// Weight+bias range of the affine layer that produces the final hidden
    /// representation. Without hidden layers this is the whole vector.
    pub fn last_hidden_range(&self) -> Range<usize> {
        if self.hidden_dims.is_empty() {
            return 0..self.param_count();
        }
        let slices = self.layer_slices();
        let layer = &slices[self.hidden_dims.len() - 1];
        layer.weight.start..layer.bias.end
    }
}

/// Exact parameter count: sum over layers of `fan_in * fan_out + fan_out`.
pub fn param_count(arch: &ArchSpec) -> usize {
    arch.layer_dims()
        .iter()
        .map(|&(fan_in, fan_out)| fan_in * fan_out + fan_out)
        .sum()
}

/// Flat parameter vector tagged with the architecture that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    values: Vec<f64>,
    arch: ArchSpec,
}

impl FlatParams {
    pub fn new(arch: ArchSpec, values: Vec<f64>) -> Result<Self> {
        let expected = arch.param_count();
        if values.len() != expected {
            return Err(FedError::config(format!(
                "parameter vector has length {}, architecture needs {}",
                values.len(),
                expected
            )));
        }
        Ok(FlatParams { values, arch })
    }

    pub fn zeros(arch: &ArchSpec) -> Self {
        FlatParams {
            values: vec![0.0; arch.param_count()],
            arch: arch.clone(),
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same architecture, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        FlatParams::new(self.arch.clone(), values)
    }

    pub fn same_arch(&self, other: &FlatParams) -> bool {
        self.arch == other.arch
    }

    /// Per-layer `(weight, bias)` copies; weights are `fan_out x fan_in`.
    pub fn unflatten(&self) -> Vec<(Array2<f64>, Array1<f64>)> {
        self.layer_views()
            .into_iter()
            .map(|(w, b)| (w.to_owned(), b.to_owned()))
            .collect()
    }

    pub fn layer_views(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        self.arch
            .layer_slices()
            .into_iter()
            .map(|l| {
                let w = ArrayView2::from_shape((l.fan_out, l.fan_in), &self.values[l.weight])
                    .expect("layer slice matches shape");
                let b = ArrayView1::from(&self.values[l.bias]);
                (w, b)
            })
            .collect()
    }

    pub fn flatten(arch: &ArchSpec, layers: &[(Array2<f64>, Array1<f64>)]) -> Result<Self> {
        let slices = arch.layer_slices();
        if layers.len() != slices.len() {
            return Err(FedError::config(format!(
                "expected {} layers, got {}",
                slices.len(),
                layers.len()
            )));
        }
        let mut values = Vec::with_capacity(arch.param_count());
        for (l, (w, b)) in slices.iter().zip(layers) {
            if w.dim() != (l.fan_out, l.fan_in) || b.len() != l.fan_out {
                return Err(FedError::config("layer shape does not match architecture"));
            }
            values.extend(w.iter().copied());
            values.extend(b.iter().copied());
        }
        FlatParams::new(arch.clone(), values)
    }
}

/// Cached activations from a forward pass. `activations[0]` is the input,
/// `activations[l + 1]` the output of layer `l` (post-ReLU for hidden
/// layers, raw affine output for the last layer).
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn raw_output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    params: FlatParams,
}

impl MlpModel {
    pub fn zeros(arch: &ArchSpec) -> Self {
        MlpModel {
            params: FlatParams::zeros(arch),
        }
    }

    pub fn from_params(params: FlatParams) -> Self {
        MlpModel { params }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Self {
        let mut params = FlatParams::zeros(arch);
        for l in arch.layer_slices() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for v in &mut params.values[l.weight] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        MlpModel { params }
    }

    pub fn arch(&self) -> &ArchSpec {
        self.params.arch()
    }

    pub fn params(&self) -> &FlatParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut FlatParams {
        &mut self.params
    }

    pub fn into_params(self) -> FlatParams {
        self.params
    }

    pub fn set_params(&mut self, params: FlatParams) -> Result<()> {
        if params.arch() != self.arch() {
            return Err(FedError::config("parameter architecture mismatch"));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.arch().input_dim {
            return Err(FedError::config(format!(
                "batch width {} does not match input_dim {}",
                batch.ncols(),
                self.arch().input_dim
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&batch)?;
        let layers = self.params.layer_views();
        let last = layers.len() - 1;
        let mut activations = Vec::with_capacity(layers.len() + 1);
        activations.push(batch.to_owned());
        for (i, (w, b)) in layers.iter().enumerate() {
            let mut z = activations[i].dot(&w.t());
            z += b;
            if i < last {
                z.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v }); // NaN passes through
            }
            activations.push(z);
        }
        Ok(Trace { activations })
    }

    /// Pre-head outputs (logits for classification heads).
    pub fn forward_raw(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut trace = self.forward_trace(batch)?;
        Ok(trace.activations.pop().expect("non-empty trace"))
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = self.forward_raw(batch)?;
        if self.arch().output_head == OutputHead::SoftmaxSimplex {
            softmax_rows(&mut out);
        }
        Ok(out)
    }

    /// Backpropagates `grad_raw` (gradient with respect to the pre-head
    /// output) through the network. Returns the flat parameter gradient and
    /// the gradient with respect to the input batch.
    pub fn backward(&self, trace: &Trace, grad_raw: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let slices = self.arch().layer_slices();
        let layers = self.params.layer_views();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = grad_raw.to_owned();
        for l in (0..layers.len()).rev() {
            let input = &trace.activations[l];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            let slice = &slices[l];
            for (dst, src) in grad[slice.weight.clone()].iter_mut().zip(gw.iter()) {
                *dst = *src;
            }
            for (dst, src) in grad[slice.bias.clone()].iter_mut().zip(gb.iter()) {
                *dst = *src;
            }
            let mut prev = delta.dot(&layers[l].0);
            if l > 0 {
                prev.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = prev;
        }
        (grad, delta)
    }

    /// Mean cross-entropy of softmax(logits) against `labels`, with its gradient.
    pub fn backward_ce(&self, batch: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, FlatParams)> {
        let classes = self.arch().output_dim;
        if labels.len() != batch.nrows() {
            return Err(FedError::config(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(FedError::config(format!("label {bad} outside [0, {classes})")));
        }
        let trace = self.forward_trace(batch)?;
        let logits = trace.raw_output();
        let n = batch.nrows() as f64;
        let mut loss = 0.0;
        let mut delta = Array2::zeros(logits.dim());
        for (i, row) in logits.outer_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[labels[i]];
            for (j, &v) in row.iter().enumerate() {
                delta[[i, j]] = (v - lse).exp() / n;
            }
            delta[[i, labels[i]]] -= 1.0 / n;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(FedError::Numeric {
                layer: first_non_finite_layer(&trace),
                message: format!("cross-entropy loss is {loss}"),
            });
        }
        let (grad, _) = self.backward(&trace, delta.view());
        Ok((loss, FlatParams::new(self.arch().clone(), grad)?))
    }

    /// Classification accuracy and mean cross-entropy on a dataset.
    pub fn evaluate(&self, data: &LabeledDataset) -> Result<(f64, f64)> {
        let logits = self.forward_raw(data.features.view())?;
        let mut correct = 0usize;
        let mut loss = 0.0;
        for (row, &y) in logits.outer_iter().zip(&data.labels) {
            if argmax(row) == y {
                correct += 1;
            }
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let n = data.len() as f64;
        Ok((correct as f64 / n, loss / n))
    }

    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.forward_raw(batch)?;
        Ok(logits.outer_iter().map(argmax).collect())
    }
}

fn first_non_finite_layer(trace: &Trace) -> usize {
    trace
        .activations
        .iter()
        .skip(1)
        .position(|a| a.iter().any(|v| !v.is_finite()))
        .unwrap_or(trace.activations.len() - 2)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// In-place row-wise softmax with max subtraction.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut m = Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("1 x n");
    softmax_rows(&mut m);
    m.into_raw_vec_and_offset().0
}

/// Backpropagates through a row-wise softmax: given `probs` and the gradient
/// with respect to them, returns the gradient with respect to the logits.
pub fn softmax_backward(probs: &Array2<f64>, grad_probs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.dim());
    for ((p, g), mut o) in probs
        .outer_iter()
        .zip(grad_probs.outer_iter())
        .zip(out.outer_iter_mut())
    {
        let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for j in 0..p.len() {
            o[j] = p[j] * (g[j] - dot);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 20,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(FedError::config("learning rate must be finite and non-negative"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(FedError::config("weight decay must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(FedError::config("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

/// `params -= lr * (grad + weight_decay * params)`
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * (g + weight_decay * *p);
    }
}

/// Runs `cfg.epochs` passes of shuffled mini-batch SGD on cross-entropy.
/// The final short batch of each epoch is kept.
pub fn sgd_train<R: Rng + ?Sized>(
    model: &mut MlpModel,
    data: &LabeledDataset,
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(FedError::config("cannot train on an empty dataset"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.features.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (_, grad) = model.backward_ce(x.view(), &y)?;
            sgd_step(
                model.params.values_mut(),
                grad.values(),
                cfg.learning_rate,
                cfg.weight_decay,
            );
        }
    }
    Ok(())
}

/// Concatenates two row-aligned matrices column-wise.
pub fn hstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}
