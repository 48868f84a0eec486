//! Dense feed-forward classifier over a flat parameter vector.
//!
//! All parameters of a network live in one contiguous [`Params`] buffer. Each
//! layer occupies a weight block (row-major `output_dim x input_dim`) followed
//! by its bias block; the offsets are the prefix sums of the shape table. The
//! final layer produces logits and the loss applies softmax cross-entropy.
//!
//! Values are stored as `S` but every dot product, softmax and reduction runs
//! in `f64`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.input_dim * self.output_dim
    }

    pub fn bias_count(&self) -> usize {
        self.output_dim
    }
}

/// Builds a ReLU stack `input -> hidden... -> classes` with an identity output layer.
pub fn dense_stack(input_dim: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(classes);
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

pub fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::config("model", "at least one layer is required"));
    }
    for (i, layer) in layers.iter().enumerate() {
        if layer.input_dim == 0 || layer.output_dim == 0 {
            return Err(Error::config(
                "model",
                format!(
                    "layer {i} has a zero dimension ({}x{})",
                    layer.input_dim, layer.output_dim
                ),
            ));
        }
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::config(
                "model",
                format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim,
                    i + 1,
                    pair[1].input_dim
                ),
            ));
        }
    }
    Ok(())
}

/// One row of the shape table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub spec: LayerSpec,
    pub weight_count: usize,
    pub bias_count: usize,
    /// Start of this layer's weight block in the flat vector.
    pub offset: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.weight_count + self.bias_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.weight_count
    }

    fn biases(&self) -> Range<usize> {
        let start = self.offset + self.weight_count;
        start..start + self.bias_count
    }
}

fn shape_table(layers: &[LayerSpec]) -> Vec<LayerShape> {
    let mut offset = 0;
    layers
        .iter()
        .map(|spec| {
            let shape = LayerShape {
                spec: *spec,
                weight_count: spec.weight_count(),
                bias_count: spec.bias_count(),
                offset,
            };
            offset += shape.len();
            shape
        })
        .collect()
}

/// Flat weight vector plus its layer shape table: the unit of model exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<S> {
    values: Vec<S>,
    shapes: Vec<LayerShape>,
}

impl<S: Scalar> Params<S> {
    pub fn zeros(layers: &[LayerSpec]) -> Result<Self> {
        validate_layers(layers)?;
        let shapes = shape_table(layers);
        let len = shapes.iter().map(LayerShape::len).sum();
        Ok(Self {
            values: vec![S::zero(); len],
            shapes,
        })
    }

    pub fn from_values(layers: &[LayerSpec], values: Vec<S>) -> Result<Self> {
        let mut params = Self::zeros(layers)?;
        if values.len() != params.values.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                params.values.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        params.values = values;
        Ok(params)
    }

    /// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn xavier<R: Rng + ?Sized>(layers: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(layers)?;
        for shape in &params.shapes {
            let spec = shape.spec;
            let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
            for v in &mut params.values[shape.weights()] {
                *v = S::from_f64_lossy(rng.random_range(-limit..=limit));
            }
        }
        Ok(params)
    }

    /// Reassembles a vector from per-layer `(weights, biases)` blocks.
    pub fn from_layer_blocks(layers: &[LayerSpec], blocks: &[(Vec<S>, Vec<S>)]) -> Result<Self> {
        let mut params = Self::zeros(layers)?;
        if blocks.len() != params.shapes.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} layer blocks, got {}",
                params.shapes.len(),
                blocks.len()
            )));
        }
        for (shape, (w, b)) in params.shapes.iter().zip(blocks) {
            if w.len() != shape.weight_count || b.len() != shape.bias_count {
                return Err(Error::InvalidInput("layer block size mismatch".into()));
            }
            params.values[shape.weights()].copy_from_slice(w);
            params.values[shape.biases()].copy_from_slice(b);
        }
        Ok(params)
    }

    pub fn layer_blocks(&self) -> Vec<(Vec<S>, Vec<S>)> {
        self.shapes
            .iter()
            .map(|s| {
                (
                    self.values[s.weights()].to_vec(),
                    self.values[s.biases()].to_vec(),
                )
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        self.shapes.iter().map(|s| s.spec).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        self.shapes[layer].range()
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.shapes[self.shapes.len() - 1].spec.output_dim
    }

    /// Model size `M` in bytes.
    pub fn model_bytes(&self) -> u64 {
        (self.values.len() * S::BYTES) as u64
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shapes == other.shapes
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * S::BYTES);
        for v in &self.values {
            v.write_le(&mut out);
        }
        out
    }

    /// Hex SHA-256 of the little-endian value bytes.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_le_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!("parameter {i} is not finite"))),
            None => Ok(()),
        }
    }
}

/// Borrowed mini-batch: row-major features plus class labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, S> {
    features: &'a [S],
    labels: &'a [usize],
    dim: usize,
}

impl<'a, S: Scalar> Batch<'a, S> {
    pub fn new(features: &'a [S], labels: &'a [usize], dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::InvalidInput(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [S] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Copy> Matrix<S> {
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }
}

fn check_batch<S: Scalar>(params: &Params<S>, batch: &Batch<'_, S>) -> Result<()> {
    if batch.dim() != params.input_dim() {
        return Err(Error::config(
            "model",
            format!(
                "batch has {} features but the first layer expects {}",
                batch.dim(),
                params.input_dim()
            ),
        ));
    }
    params.check_finite()
}

/// Per-sample activations kept for backpropagation.
struct Trace {
    /// `inputs[l]` is the input to layer `l`; the last entry holds the logits.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
}

fn forward_sample<S: Scalar>(params: &Params<S>, x: &[S], trace: &mut Trace) {
    let values = params.values();
    trace.inputs[0].clear();
    trace.inputs[0].extend(x.iter().map(|v| v.as_f64()));
    for (l, shape) in params.shapes().iter().enumerate() {
        let spec = shape.spec;
        let w = &values[shape.weights()];
        let b = &values[shape.biases()];
        let (before, after) = trace.inputs.split_at_mut(l + 1);
        let input = &before[l];
        let out = &mut after[0];
        let pre = &mut trace.pre[l];
        pre.clear();
        out.clear();
        for o in 0..spec.output_dim {
            let row = &w[o * spec.input_dim..(o + 1) * spec.input_dim];
            let mut acc = b[o].as_f64();
            for (wi, xi) in row.iter().zip(input) {
                acc += wi.as_f64() * xi;
            }
            pre.push(acc);
            out.push(spec.activation.apply(acc));
        }
    }
}

fn new_trace<S: Scalar>(params: &Params<S>) -> Trace {
    let mut inputs = vec![Vec::with_capacity(params.input_dim())];
    let mut pre = Vec::new();
    for shape in params.shapes() {
        inputs.push(Vec::with_capacity(shape.spec.output_dim));
        pre.push(Vec::with_capacity(shape.spec.output_dim));
    }
    Trace { inputs, pre }
}

/// Returns `(log-sum-exp, argmax)` of the logits; ties go to the lowest index.
fn logsumexp_argmax(logits: &[f64]) -> (f64, usize) {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    let max = logits[best];
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    (max + sum.ln(), best)
}

/// Logits for every row of the batch (`batch_size x num_classes`).
pub fn forward<S: Scalar>(params: &Params<S>, batch: &Batch<'_, S>) -> Result<Matrix<S>> {
    check_batch(params, batch)?;
    let classes = params.num_classes();
    let mut trace = new_trace(params);
    let mut data = Vec::with_capacity(batch.len() * classes);
    for i in 0..batch.len() {
        forward_sample(params, batch.row(i), &mut trace);
        data.extend(
            trace.inputs[params.num_layers()]
                .iter()
                .map(|&v| S::from_f64_lossy(v)),
        );
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "forward pass produced non-finite logits".into(),
        ));
    }
    Ok(Matrix {
        rows: batch.len(),
        cols: classes,
        data,
    })
}

fn check_labels<S: Scalar>(params: &Params<S>, batch: &Batch<'_, S>) -> Result<()> {
    let classes = params.num_classes();
    match batch.labels().iter().position(|&y| y >= classes) {
        Some(i) => Err(Error::InvalidInput(format!(
            "label {} at row {i} is not below {classes}",
            batch.labels()[i]
        ))),
        None => Ok(()),
    }
}

/// Mean softmax cross-entropy and its gradient with respect to every parameter.
pub fn loss_and_grad<S: Scalar>(
    params: &Params<S>,
    batch: &Batch<'_, S>,
) -> Result<(f64, Params<S>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    check_batch(params, batch)?;
    check_labels(params, batch)?;

    let layers = params.num_layers();
    let values = params.values();
    let mut grad = vec![0.0f64; params.len()];
    let mut trace = new_trace(params);
    let mut total_loss = 0.0;
    let mut delta: Vec<f64> = Vec::new();
    let mut prev_delta: Vec<f64> = Vec::new();

    for i in 0..batch.len() {
        forward_sample(params, batch.row(i), &mut trace);
        let logits = &trace.inputs[layers];
        let label = batch.labels()[i];
        let (lse, _) = logsumexp_argmax(logits);
        total_loss += lse - logits[label];

        // dL/dlogits = softmax - onehot
        delta.clear();
        delta.extend(logits.iter().map(|z| (z - lse).exp()));
        delta[label] -= 1.0;

        for l in (0..layers).rev() {
            let shape = &params.shapes()[l];
            let spec = shape.spec;
            // The output layer's activation derivative is folded into delta here too.
            for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= spec.activation.derivative(*z);
            }
            let input = &trace.inputs[l];
            let wr = shape.weights();
            let br = shape.biases();
            for o in 0..spec.output_dim {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g =
                    &mut grad[wr.start + o * spec.input_dim..wr.start + (o + 1) * spec.input_dim];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[br.start + o] += d;
            }
            if l > 0 {
                prev_delta.clear();
                prev_delta.resize(spec.input_dim, 0.0);
                let w = &values[wr];
                for o in 0..spec.output_dim {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * spec.input_dim..(o + 1) * spec.input_dim];
                    for (p, wi) in prev_delta.iter_mut().zip(row) {
                        *p += d * wi.as_f64();
                    }
                }
                std::mem::swap(&mut delta, &mut prev_delta);
            }
        }
    }

    let n = batch.len() as f64;
    let grad_values = grad.into_iter().map(|g| S::from_f64_lossy(g / n)).collect();
    let grad = Params {
        values: grad_values,
        shapes: params.shapes.clone(),
    };
    Ok((total_loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub params: Params<S>,
    /// Mean mini-batch loss of each epoch, measured before the step on that batch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD over `data[indices]`, reshuffled by `rng` at every epoch.
///
/// A learning rate of zero is accepted and leaves the parameters untouched.
pub fn train_epochs<S: Scalar, R: Rng + ?Sized>(
    params: &Params<S>,
    data: &Dataset<S>,
    indices: &[usize],
    opts: &SgdOptions,
    rng: &mut R,
) -> Result<TrainOutcome<S>> {
    if opts.epochs == 0 {
        return Err(Error::config("client_epochs", "must be at least 1"));
    }
    if !opts.learning_rate.is_finite() || opts.learning_rate < 0.0 {
        return Err(Error::config(
            "learning_rate",
            "must be a finite value >= 0",
        ));
    }
    if opts.batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    if indices.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty shard".into()));
    }

    let lr = S::from_f64_lossy(opts.learning_rate);
    let dim = data.dim();
    let mut current = params.clone();
    let mut order = indices.to_vec();
    let mut features = Vec::with_capacity(opts.batch_size * dim);
    let mut labels = Vec::with_capacity(opts.batch_size);
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            features.clear();
            labels.clear();
            for &idx in chunk {
                features.extend_from_slice(data.row(idx));
                labels.push(data.label(idx));
            }
            let batch = Batch::new(&features, &labels, dim)?;
            let (loss, grad) = loss_and_grad(&current, &batch)?;
            loss_sum += loss;
            batches += 1;
            for (v, g) in current.values.iter_mut().zip(grad.values()) {
                *v = *v - lr * *g;
            }
        }
        if !current.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged in epoch {}",
                epoch + 1
            )));
        }
        epoch_losses.push(loss_sum / batches as f64);
    }
    Ok(TrainOutcome {
        params: current,
        epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy (argmax, lowest index on ties) and mean cross-entropy over a whole dataset.
pub fn evaluate<S: Scalar>(params: &Params<S>, data: &Dataset<S>) -> Result<Evaluation> {
    evaluate_rows(params, data, (0..data.len()).collect::<Vec<_>>().as_slice())
}

/// Same as [`evaluate`], restricted to `data[indices]`.
pub fn evaluate_rows<S: Scalar>(
    params: &Params<S>,
    data: &Dataset<S>,
    indices: &[usize],
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    if data.dim() != params.input_dim() {
        return Err(Error::config(
            "model",
            format!(
                "dataset has {} features but the first layer expects {}",
                data.dim(),
                params.input_dim()
            ),
        ));
    }
    params.check_finite()?;
    let classes = params.num_classes();
    let layers = params.num_layers();
    let mut trace = new_trace(params);
    let mut correct = 0usize;
    let mut loss = 0.0;
    for &idx in indices {
        let label = data.label(idx);
        if label >= classes {
            return Err(Error::InvalidInput(format!(
                "label {label} is not below {classes}"
            )));
        }
        forward_sample(params, data.row(idx), &mut trace);
        let logits = &trace.inputs[layers];
        let (lse, argmax) = logsumexp_argmax(logits);
        loss += lse - logits[label];
        if argmax == label {
            correct += 1;
        }
    }
    let n = indices.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}
