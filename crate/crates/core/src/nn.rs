//! Feed-forward encoder with a linear classification head.
//!
//! The encoder is a stack of dense layers with ReLU between hidden layers and an
//! identity activation on its last layer, whose output is the representation `z`.
//! A single dense layer maps `z` to class logits. Gradients are computed
//! analytically for cross-entropy plus the two contrastive terms, including the
//! path through representation normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    self, global_contrastive_with_grad, local_contrastive_with_grad, LossBreakdown, LossConfig,
    NORM_EPS,
};
use crate::matrix::{dot, l2_norm, Matrix};
use crate::prototype::PrototypeBank;

/// Layer widths of an encoder + classifier network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input_dim: usize,
    /// Widths of the ReLU hidden layers between input and representation.
    pub hidden: Vec<usize>,
    pub rep_dim: usize,
    pub class_count: usize,
}

impl Dims {
    pub fn new(input_dim: usize, hidden: Vec<usize>, rep_dim: usize, class_count: usize) -> Self {
        Self {
            input_dim,
            hidden,
            rep_dim,
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.rep_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("layer widths must be > 0: {self:?}")));
        }
        if self.class_count < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.class_count
            )));
        }
        Ok(())
    }

    /// `(in, out)` for every layer, encoder first, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.rep_dim);
        widths.push(self.class_count);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// A dense layer `y = W x + b` with row-major `W` of shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn affine(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.out_dim);
        for i in 0..input.rows() {
            let x = input.row(i);
            let row = out.row_mut(i);
            for (o, y) in row.iter_mut().enumerate() {
                *y = self.bias[o] + dot(&self.weights[o * self.in_dim..(o + 1) * self.in_dim], x);
            }
        }
        out
    }
}

/// All weights and biases of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Layer>,
    encoder_depth: usize,
}

/// Gradients congruent with a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(&mut l.bias)
                .for_each(|v| *v *= factor);
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Flattened view in checkpoint order (weights then bias, layer by layer).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

impl ModelParams {
    /// Assembles parameters from explicit layers. The last layer is the head.
    pub fn from_layers(layers: Vec<Layer>, encoder_depth: usize) -> Result<Self> {
        if layers.len() < 2 || encoder_depth + 1 != layers.len() {
            return Err(Error::Config(format!(
                "expected encoder layers followed by one head layer, got {} layers with encoder depth {encoder_depth}",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Config(format!(
                    "layer {i} buffers do not match its shape"
                )));
            }
            if !l.is_finite() {
                return Err(Error::Numeric {
                    layer: i,
                    detail: "non-finite parameter".into(),
                });
            }
        }
        Ok(Self {
            layers,
            encoder_depth,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn encoder_depth(&self) -> usize {
        self.encoder_depth
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn rep_dim(&self) -> usize {
        self.layers[self.encoder_depth - 1].out_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input_dim: self.input_dim(),
            hidden: self.layers[..self.encoder_depth - 1]
                .iter()
                .map(|l| l.out_dim)
                .collect(),
            rep_dim: self.rep_dim(),
            class_count: self.class_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Bytes needed to transmit the parameters as 64-bit floats.
    pub fn byte_size(&self) -> usize {
        self.param_count() * std::mem::size_of::<f64>()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    /// In-place `params -= lr * gradients`.
    pub fn apply_sgd(&mut self, gradients: &Gradients, lr: f64) -> Result<()> {
        check_congruent(self, gradients)?;
        for (i, g) in gradients.layers.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Numeric {
                    layer: i,
                    detail: "non-finite gradient".into(),
                });
            }
        }
        for (l, g) in self.layers.iter_mut().zip(&gradients.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w -= lr * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
        Ok(())
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

fn check_congruent(params: &ModelParams, gradients: &Gradients) -> Result<()> {
    let same = params.layers.len() == gradients.layers.len()
        && params
            .layers
            .iter()
            .zip(&gradients.layers)
            .all(|(p, g)| p.in_dim == g.in_dim && p.out_dim == g.out_dim);
    if same {
        Ok(())
    } else {
        Err(Error::Config(
            "gradient shape does not match parameters".into(),
        ))
    }
}

/// Fan-in scaled uniform initialization in `±sqrt(6 / fan_in)` with zero biases.
pub fn init_params(dims: &Dims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = dims.layer_shapes();
    let layers = shapes
        .iter()
        .map(|&(fan_in, out)| {
            let limit = (6.0 / fan_in as f64).sqrt();
            let mut layer = Layer::zeros(fan_in, out);
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
            layer
        })
        .collect::<Vec<_>>();
    ModelParams::from_layers(layers, shapes.len() - 1)
}

/// `params - lr * gradients` as a new value.
pub fn sgd_step(params: &ModelParams, gradients: &Gradients, lr: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    next.apply_sgd(gradients, lr)?;
    Ok(next)
}

/// Outputs of a forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Raw encoder output, one row per sample.
    pub representations: Matrix,
    pub logits: Matrix,
    pub probabilities: Matrix,
}

impl ForwardResult {
    pub fn predictions(&self) -> Vec<usize> {
        self.probabilities.iter_rows().map(argmax).collect()
    }

    pub fn normalized_representations(&self) -> Matrix {
        losses::normalize_rows(&self.representations)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct Trace {
    /// `inputs[l]` is the input of layer `l`; the final entry is the logits.
    activations: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

fn is_relu(layer: usize, encoder_depth: usize) -> bool {
    layer + 1 < encoder_depth
}

fn check_batch(params: &ModelParams, batch: &Matrix) -> Result<()> {
    if batch.cols() != params.input_dim() {
        return Err(Error::Config(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    Ok(())
}

fn trace(params: &ModelParams, batch: &Matrix) -> Trace {
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    activations.push(batch.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let pre = layer.affine(&activations[l]);
        let mut act = pre.clone();
        if is_relu(l, params.encoder_depth) {
            act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        pre_activations.push(pre);
        activations.push(act);
    }
    Trace {
        activations,
        pre_activations,
    }
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        probs
            .row_mut(i)
            .copy_from_slice(&losses::softmax(logits.row(i)));
    }
    probs
}

pub fn forward(params: &ModelParams, batch: &Matrix) -> Result<ForwardResult> {
    check_batch(params, batch)?;
    let mut t = trace(params, batch);
    let logits = t.activations.pop().expect("network has layers");
    let representations = t.activations.swap_remove(params.encoder_depth);
    let probabilities = softmax_rows(&logits);
    Ok(ForwardResult {
        representations,
        logits,
        probabilities,
    })
}

/// Loss of the combined objective and its gradient with respect to every parameter.
///
/// `prototypes` is required whenever the global coefficient is positive.
pub fn backward(
    params: &ModelParams,
    batch: &Matrix,
    labels: &[usize],
    loss: &LossConfig,
    prototypes: Option<&PrototypeBank>,
) -> Result<(LossBreakdown, Gradients)> {
    check_batch(params, batch)?;
    loss.validate()?;
    if labels.len() != batch.rows() || batch.rows() == 0 {
        return Err(Error::Config(format!(
            "{} labels for a batch of {} samples",
            labels.len(),
            batch.rows()
        )));
    }
    let classes = params.class_count();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Config(format!("label {bad} outside [0, {classes})")));
    }
    let prototypes = match (loss.uses_global(), prototypes) {
        (true, None) => {
            return Err(Error::Config(
                "global contrastive term requires a prototype bank".into(),
            ))
        }
        (true, Some(p)) => Some(p),
        (false, _) => None,
    };

    let n = batch.rows();
    let t = trace(params, batch);
    let depth = params.layers.len();
    let logits = &t.activations[depth];
    let rep = &t.activations[params.encoder_depth];

    let mut breakdown = LossBreakdown::default();
    // cross-entropy: d/dlogits = (softmax - onehot) / N
    let mut delta = softmax_rows(logits);
    breakdown.cross_entropy = losses::cross_entropy_from_logits(logits, labels);
    for (i, &y) in labels.iter().enumerate() {
        let row = delta.row_mut(i);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f64);
    }

    let mut grads = Gradients::zeros_like(params);
    for l in (0..depth).rev() {
        if l + 1 == params.encoder_depth {
            // representation layer output: add contrastive gradients
            let extra = contrastive_rep_grad(rep, labels, loss, prototypes, &mut breakdown)?;
            if let Some(extra) = extra {
                for (d, e) in delta.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                    *d += e;
                }
            }
        }
        if is_relu(l, params.encoder_depth) {
            let pre = &t.pre_activations[l];
            for (d, &z) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let layer = &params.layers[l];
        let input = &t.activations[l];
        let g = &mut grads.layers[l];
        for i in 0..n {
            let d = delta.row(i);
            let x = input.row(i);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                let w = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (wv, &xv) in w.iter_mut().zip(x) {
                    *wv += dv * xv;
                }
            }
        }
        if l > 0 {
            let mut next = Matrix::zeros(n, layer.in_dim);
            for i in 0..n {
                let d = delta.row(i);
                let out = next.row_mut(i);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (ov, &wv) in out.iter_mut().zip(w) {
                        *ov += dv * wv;
                    }
                }
            }
            delta = next;
        }
    }
    breakdown.total = losses::total_loss(
        breakdown.cross_entropy,
        breakdown.local,
        breakdown.global,
        loss,
    );
    for (i, g) in grads.layers.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numeric {
                layer: i,
                detail: "non-finite gradient".into(),
            });
        }
    }
    Ok((breakdown, grads))
}

/// Gradient of the weighted contrastive terms with respect to the raw
/// representation, chained through row normalization.
fn contrastive_rep_grad(
    rep: &Matrix,
    labels: &[usize],
    loss: &LossConfig,
    prototypes: Option<&PrototypeBank>,
    breakdown: &mut LossBreakdown,
) -> Result<Option<Matrix>> {
    if !loss.uses_local() && !loss.uses_global() {
        return Ok(None);
    }
    let unit = losses::normalize_rows(rep);
    let mut d_unit = Matrix::zeros(rep.rows(), rep.cols());
    if loss.uses_local() {
        let (value, g) = local_contrastive_with_grad(&unit, labels, loss.temperature, true)?;
        breakdown.local = value;
        let g = g.expect("gradient requested");
        for (d, v) in d_unit.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *d += loss.lambda_local * v;
        }
    }
    if let Some(bank) = prototypes {
        let (value, skipped, g) =
            global_contrastive_with_grad(&unit, labels, bank, loss.temperature, true)?;
        breakdown.global = value;
        breakdown.skipped_global = skipped;
        let g = g.expect("gradient requested");
        for (d, v) in d_unit.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *d += loss.lambda_global * v;
        }
    }
    // u = z / |z|  =>  dz = (du - u (u . du)) / |z|
    let mut d_rep = Matrix::zeros(rep.rows(), rep.cols());
    for i in 0..rep.rows() {
        let norm = l2_norm(rep.row(i));
        let u = unit.row(i);
        let du = d_unit.row(i);
        let out = d_rep.row_mut(i);
        if norm < NORM_EPS {
            for (o, &g) in out.iter_mut().zip(du) {
                *o = g / NORM_EPS;
            }
            continue;
        }
        let proj = dot(u, du);
        for ((o, &g), &uv) in out.iter_mut().zip(du).zip(u) {
            *o = (g - uv * proj) / norm;
        }
    }
    Ok(Some(d_rep))
}
