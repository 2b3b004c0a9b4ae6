//! Shared-encoder MLP with one head per task, exact gradients and Adam.
//!
//! Layout: `input -> encoder (ReLU after every layer) -> head_t` for each
//! task `t`. Head layers use ReLU except the last, which emits one raw
//! logit. An empty encoder passes the input through unchanged.
//!
//! Parameters are enumerated layer-major: encoder layers first, then the
//! heads in task order; within a layer the weight matrix (row-major,
//! `outputs x inputs`) precedes the bias vector. [`Params::flatten`] and
//! [`Params::dump`] both follow that order.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{bce_grad, check_loss_shapes, total_loss_with_pos_weight};
use crate::loss::{LabelValue, TaskLossReport, WeightVector};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.cols + j] = value;
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Architecture and initialization seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_layers: Vec<usize>,
    /// Widths of each head; the last entry must be 1.
    pub head_layers: Vec<usize>,
    pub task_count: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 32,
            encoder_layers: vec![32, 16],
            head_layers: vec![8, 1],
            task_count: 5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.task_count == 0 {
            return Err(Error::Config("task_count must be at least 1".into()));
        }
        if let Some(i) = self.encoder_layers.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("encoder layer {i} has width 0")));
        }
        if let Some(i) = self.head_layers.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("head layer {i} has width 0")));
        }
        match self.head_layers.last() {
            Some(1) => Ok(()),
            Some(w) => Err(Error::Config(format!(
                "the last head layer must emit one logit, got width {w}"
            ))),
            None => Err(Error::Config("head_layers must not be empty".into())),
        }
    }

    pub fn encoder_output_dim(&self) -> usize {
        self.encoder_layers
            .last()
            .copied()
            .unwrap_or(self.input_dim)
    }
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid Adam settings {self:?}: need lr > 0, 0 < beta1, beta2 < 1, epsilon > 0"
            )))
        }
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b);
        }
    }

    fn tensors(&self) -> [&[f64]; 2] {
        [&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

/// All trainable tensors. Gradients and Adam moments reuse this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub encoder: Vec<Dense>,
    pub heads: Vec<Vec<Dense>>,
}

impl Params {
    fn zeros_for(config: &ModelConfig) -> Self {
        let mut encoder = Vec::with_capacity(config.encoder_layers.len());
        let mut width = config.input_dim;
        for &w in &config.encoder_layers {
            encoder.push(Dense::zeros(width, w));
            width = w;
        }
        let heads = (0..config.task_count)
            .map(|_| {
                let mut width = config.encoder_output_dim();
                config
                    .head_layers
                    .iter()
                    .map(|&w| {
                        let layer = Dense::zeros(width, w);
                        width = w;
                        layer
                    })
                    .collect()
            })
            .collect();
        Params { encoder, heads }
    }

    /// Tensors in layer-major order, weights before biases.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.encoder
            .iter()
            .chain(self.heads.iter().flatten())
            .flat_map(|l| l.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.heads.iter_mut().flatten())
            .flat_map(|l| l.tensors_mut())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_shape(&self, other: &Params) -> bool {
        self.encoder.len() == other.encoder.len()
            && self.heads.len() == other.heads.len()
            && self
                .heads
                .iter()
                .zip(&other.heads)
                .all(|(a, b)| a.len() == b.len())
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.len() == b.len())
    }

    /// Text dump: a `#` header describing the layout, then one value per
    /// line in shortest round-trip scientific notation.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mtlw-params v1 count={}", self.len());
        for (i, l) in self.encoder.iter().enumerate() {
            let _ = writeln!(out, "# encoder.{i} {}x{}", l.outputs, l.inputs);
        }
        for (t, head) in self.heads.iter().enumerate() {
            for (i, l) in head.iter().enumerate() {
                let _ = writeln!(out, "# head.{t}.{i} {}x{}", l.outputs, l.inputs);
            }
        }
        for v in self.tensors().flatten() {
            let _ = writeln!(out, "{v:e}");
        }
        out
    }

    fn axpy_from(&mut self, scale: f64, other: &Params) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Adam moment accumulators and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Params,
    pub second_moment: Params,
}

/// Network parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub params: Params,
    pub adam: AdamState,
}

/// Cached activations for one sample.
struct Trace {
    /// Inputs to every encoder layer, plus the encoder output at the end.
    encoder: Vec<Vec<f64>>,
    /// Per head: inputs to every layer, plus the logit vector at the end.
    heads: Vec<Vec<Vec<f64>>>,
}

/// Result of [`backward`]: gradient of the total loss and the loss itself.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub gradients: Params,
    pub loss: TaskLossReport,
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn check_finite(v: &[f64], location: impl FnOnce() -> String) -> Result<()> {
    match v.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(Error::numerical(location(), format!("activation {x}"))),
        None => Ok(()),
    }
}

impl Model {
    /// Glorot-uniform weights, zero biases, zeroed Adam state.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::zeros_for(&config);
        for layer in params
            .encoder
            .iter_mut()
            .chain(params.heads.iter_mut().flatten())
        {
            *layer = Dense::glorot(layer.inputs, layer.outputs, &mut rng);
        }
        let zeros = Params::zeros_for(&config);
        Ok(Model {
            config,
            params,
            adam: AdamState {
                step: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
        })
    }

    /// Model with every parameter zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let zeros = Params::zeros_for(&config);
        Ok(Model {
            config,
            params: zeros.clone(),
            adam: AdamState {
                step: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn task_count(&self) -> usize {
        self.config.task_count
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        let mut encoder = Vec::with_capacity(self.params.encoder.len() + 1);
        encoder.push(x.to_vec());
        for (i, layer) in self.params.encoder.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(encoder.last().unwrap(), &mut out);
            check_finite(&out, || format!("encoder layer {i}"))?;
            relu_in_place(&mut out);
            encoder.push(out);
        }
        let shared = encoder.last().unwrap();
        let mut heads = Vec::with_capacity(self.params.heads.len());
        for (t, head) in self.params.heads.iter().enumerate() {
            let mut acts = Vec::with_capacity(head.len() + 1);
            acts.push(shared.clone());
            for (i, layer) in head.iter().enumerate() {
                let mut out = Vec::with_capacity(layer.outputs);
                layer.apply(acts.last().unwrap(), &mut out);
                check_finite(&out, || format!("head {t} layer {i}"))?;
                if i + 1 < head.len() {
                    relu_in_place(&mut out);
                }
                acts.push(out);
            }
            heads.push(acts);
        }
        Ok(Trace { encoder, heads })
    }

    fn logit_matrix(&self, traces: &[Trace]) -> Matrix {
        let tasks = self.task_count();
        let mut data = Vec::with_capacity(traces.len() * tasks);
        for tr in traces {
            data.extend(tr.heads.iter().map(|acts| acts.last().unwrap()[0]));
        }
        Matrix::new(traces.len(), tasks, data).expect("logit shape")
    }
}

/// Per-task logits, `batch_rows x task_count`.
pub fn forward(model: &Model, batch: &Matrix) -> Result<Matrix> {
    model.check_batch(batch)?;
    let traces = (0..batch.rows())
        .map(|i| model.trace(batch.row(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(model.logit_matrix(&traces))
}

/// Gradient of the weighted masked total loss with respect to every parameter.
pub fn backward(
    model: &Model,
    batch: &Matrix,
    labels: &Matrix<LabelValue>,
    weights: &WeightVector,
) -> Result<BackwardPass> {
    backward_with_pos_weight(model, batch, labels, weights, None)
}

pub fn backward_with_pos_weight(
    model: &Model,
    batch: &Matrix,
    labels: &Matrix<LabelValue>,
    weights: &WeightVector,
    pos_weight: Option<&[f64]>,
) -> Result<BackwardPass> {
    model.check_batch(batch)?;
    if labels.rows() != batch.rows() {
        return Err(Error::Dimension(format!(
            "{} label rows for {} samples",
            labels.rows(),
            batch.rows()
        )));
    }
    let traces = (0..batch.rows())
        .map(|i| model.trace(batch.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let logits = model.logit_matrix(&traces);
    check_loss_shapes(&logits, labels, weights, pos_weight)?;
    let loss = total_loss_with_pos_weight(&logits, labels, weights, pos_weight)?;
    if !loss.total.is_finite() {
        return Err(Error::numerical("total loss", format!("{}", loss.total)));
    }

    // dTotal/dlogit[i][t] = w_t / coded_t * dBCE/dz
    let tasks = model.task_count();
    let scale: Vec<f64> = (0..tasks)
        .map(|t| match loss.per_task_coded_count[t] {
            0 => 0.0,
            n => weights.as_slice()[t] / n as f64,
        })
        .collect();

    let mut grads = Params::zeros_for(&model.config);
    let enc_out = model.config.encoder_output_dim();
    for (i, tr) in traces.iter().enumerate() {
        let mut d_shared = vec![0.0; enc_out];
        for t in 0..tasks {
            let Some(y) = labels.get(i, t).as_bool() else {
                continue;
            };
            if scale[t] == 0.0 {
                continue;
            }
            let pw = pos_weight.map_or(1.0, |p| p[t]);
            let z = logits.get(i, t);
            let delta = vec![scale[t] * bce_grad(z, y, pw)];
            let d_in = backprop_stack(
                &model.params.heads[t],
                &mut grads.heads[t],
                &tr.heads[t],
                delta,
                false,
            );
            for (a, b) in d_shared.iter_mut().zip(&d_in) {
                *a += b;
            }
        }
        backprop_stack(
            &model.params.encoder,
            &mut grads.encoder,
            &tr.encoder,
            d_shared,
            true,
        );
    }
    Ok(BackwardPass {
        gradients: grads,
        loss,
    })
}

/// Backpropagates `delta` (gradient w.r.t. the stack output) through the
/// layers, accumulating into `grads`. `acts[k]` is the input of layer `k`
/// and `acts[len]` its post-activation output. When `relu_last` is false,
/// the final layer is linear. Returns the gradient w.r.t. the stack input.
fn backprop_stack(
    layers: &[Dense],
    grads: &mut [Dense],
    acts: &[Vec<f64>],
    mut delta: Vec<f64>,
    relu_last: bool,
) -> Vec<f64> {
    for k in (0..layers.len()).rev() {
        let layer = &layers[k];
        let is_relu = relu_last || k + 1 < layers.len();
        if is_relu {
            // ReLU output is zero exactly where the pre-activation was <= 0.
            for (d, a) in delta.iter_mut().zip(&acts[k + 1]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = &acts[k];
        let g = &mut grads[k];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (gw, x) in row.iter_mut().zip(input) {
                *gw += d * x;
            }
        }
        let mut d_in = vec![0.0; layer.inputs];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (di, w) in d_in.iter_mut().zip(row) {
                *di += d * w;
            }
        }
        delta = d_in;
    }
    delta
}

/// One bias-corrected Adam update. Returns the updated model.
pub fn adam_step(mut model: Model, gradients: &Params, hyper: &AdamHyper) -> Result<Model> {
    apply_adam(&mut model, gradients, hyper)?;
    Ok(model)
}

/// In-place form of [`adam_step`].
pub fn apply_adam(model: &mut Model, gradients: &Params, hyper: &AdamHyper) -> Result<()> {
    hyper.validate()?;
    if !model.params.same_shape(gradients) {
        return Err(Error::Dimension(
            "gradient tensors do not match model parameters".into(),
        ));
    }
    model.adam.step += 1;
    let t = model.adam.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let AdamState {
        first_moment,
        second_moment,
        ..
    } = &mut model.adam;
    let tensors = model
        .params
        .tensors_mut()
        .zip(gradients.tensors())
        .zip(first_moment.tensors_mut().zip(second_moment.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

/// Adds `scale * other` to `target`, tensor by tensor.
pub fn accumulate(target: &mut Params, scale: f64, other: &Params) -> Result<()> {
    if !target.same_shape(other) {
        return Err(Error::Dimension("parameter shapes differ".into()));
    }
    target.axpy_from(scale, other);
    Ok(())
}
