//! Feedforward binary classifier with rectifier hidden layers and a single
//! logistic output unit.
//!
//! Besides the usual forward pass and parameter gradients, the network
//! exposes its backward pass down to the input layer, both the standard one
//! and the guided variant that gates negative signals at every rectifier.
//! Training snapshots a deep copy of the parameters at a fixed epoch cadence.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{DataSplits, Dataset, Matrix};
use crate::evaluation;
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            hidden_activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// A logistic-regression network with no hidden layer. Its logit is an
    /// affine function of the input, which makes it the reference case for
    /// checking attribution methods in closed form.
    pub fn linear(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            hidden_activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidArgument("at least one hidden layer is required".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(out, in)` for every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.push((1, fan_in));
        shapes
    }
}

/// One dense layer; `weights` is row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.in_dim + i]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    /// `W^T * delta`.
    fn back(&self, delta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.in_dim];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for (gi, w) in g.iter_mut().zip(row) {
                *gi += w * d;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        let shapes = arch.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} layers for an architecture with {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (l, (layer, (o, i))) in self.layers.iter().zip(shapes).enumerate() {
            if layer.out_dim != o || layer.in_dim != i || layer.weights.len() != o * i || layer.bias.len() != o {
                return Err(Error::Shape(format!("layer {l} does not have shape {o}x{i}")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} parameters")));
            }
        }
        Ok(())
    }
}

/// Which scalar of the output unit is differentiated or perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Logit,
    Probability,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> MlpParams {
    let mut rng = rng_from(seed, &[INIT_STREAM]);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(out_dim, in_dim)| {
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let weights = (0..out_dim * in_dim).map(|_| rng.random_range(-limit..limit)).collect();
            Layer {
                out_dim,
                in_dim,
                weights,
                bias: vec![0.0; out_dim],
            }
        })
        .collect();
    MlpParams { layers }
}

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5ff1;

/// Activations recorded by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub probability: f64,
    pub logit: f64,
    /// Pre-activation values of every hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// `post[0]` is the input; `post[l + 1]` the rectified output of hidden layer `l`.
    pub post: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self, target: Target) -> f64 {
        match target {
            Target::Logit => self.logit,
            Target::Probability => self.probability,
        }
    }
}

fn check_input(params: &MlpParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input".into()));
    }
    Ok(())
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<ForwardPass> {
    check_input(params, x)?;
    let n_hidden = params.n_hidden();
    let mut pre = Vec::with_capacity(n_hidden);
    let mut post = Vec::with_capacity(n_hidden + 1);
    post.push(x.to_vec());
    for layer in &params.layers[..n_hidden] {
        let mut z = Vec::with_capacity(layer.out_dim);
        layer.apply(post.last().expect("input pushed"), &mut z);
        post.push(z.iter().map(|v| v.max(0.0)).collect());
        pre.push(z);
    }
    let mut out = Vec::with_capacity(1);
    params.layers[n_hidden].apply(post.last().expect("input pushed"), &mut out);
    let logit = out[0];
    if !logit.is_finite() {
        return Err(Error::NonFinite("network logit".into()));
    }
    Ok(ForwardPass {
        probability: sigmoid(logit),
        logit,
        pre,
        post,
    })
}

/// Forward pass that keeps no cache.
pub fn output(params: &MlpParams, x: &[f64], target: Target) -> Result<f64> {
    check_input(params, x)?;
    let mut a = x.to_vec();
    let mut z = Vec::new();
    let n_hidden = params.n_hidden();
    for layer in &params.layers[..n_hidden] {
        layer.apply(&a, &mut z);
        a.clear();
        a.extend(z.iter().map(|v| v.max(0.0)));
    }
    params.layers[n_hidden].apply(&a, &mut z);
    let logit = z[0];
    if !logit.is_finite() {
        return Err(Error::NonFinite("network logit".into()));
    }
    Ok(match target {
        Target::Logit => logit,
        Target::Probability => sigmoid(logit),
    })
}

/// How a backward pass treats each rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardRule {
    /// Exact derivative: pass where the pre-activation is positive.
    Standard,
    /// Additionally zero any incoming signal that is negative.
    Guided,
}

/// Propagates `d_logit` from the output unit down to the input.
pub fn backward_to_input(params: &MlpParams, pass: &ForwardPass, d_logit: f64, rule: BackwardRule) -> Vec<f64> {
    let n_hidden = params.n_hidden();
    let mut grad = params.layers[n_hidden].back(&[d_logit]);
    for l in (0..n_hidden).rev() {
        for (g, z) in grad.iter_mut().zip(&pass.pre[l]) {
            let open = match rule {
                BackwardRule::Standard => *z > 0.0,
                BackwardRule::Guided => *z > 0.0 && *g >= 0.0,
            };
            if !open {
                *g = 0.0;
            }
        }
        grad = params.layers[l].back(&grad);
    }
    grad
}

fn target_scale(pass: &ForwardPass, target: Target) -> f64 {
    match target {
        Target::Logit => 1.0,
        Target::Probability => pass.probability * (1.0 - pass.probability),
    }
}

/// Reverse-mode derivative of the selected output scalar with respect to `x`.
pub fn input_gradient(params: &MlpParams, x: &[f64], target: Target) -> Result<Vec<f64>> {
    let pass = forward(params, x)?;
    let g = backward_to_input(params, &pass, target_scale(&pass, target), BackwardRule::Standard);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input gradient".into()));
    }
    Ok(g)
}

/// Input gradient with the guided rule at every rectifier.
pub fn guided_gradient(params: &MlpParams, x: &[f64], target: Target) -> Result<Vec<f64>> {
    let pass = forward(params, x)?;
    let g = backward_to_input(params, &pass, target_scale(&pass, target), BackwardRule::Guided);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("guided gradient".into()));
    }
    Ok(g)
}

/// Accumulates parameter gradients of `d_logit * logit` into `grads`.
fn accumulate_param_grads(params: &MlpParams, pass: &ForwardPass, d_logit: f64, grads: &mut MlpParams) {
    let n_hidden = params.n_hidden();
    let mut delta = vec![d_logit];
    for l in (0..=n_hidden).rev() {
        let input = &pass.post[l];
        let g = &mut grads.layers[l];
        for (o, d) in delta.iter().enumerate() {
            g.bias[o] += d;
            let row = &mut g.weights[o * g.in_dim..(o + 1) * g.in_dim];
            for (w, a) in row.iter_mut().zip(input) {
                *w += d * a;
            }
        }
        if l == 0 {
            break;
        }
        let mut back = params.layers[l].back(&delta);
        for (b, z) in back.iter_mut().zip(&pass.pre[l - 1]) {
            if *z <= 0.0 {
                *b = 0.0;
            }
        }
        delta = back;
    }
}

/// Numerically stable binary cross-entropy on a logit.
fn bce_with_logit(z: f64, y: u8) -> f64 {
    z.max(0.0) - f64::from(y) * z + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over the listed rows.
pub fn bce_loss(params: &MlpParams, features: &Matrix, labels: &[u8], idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        total += bce_with_logit(output(params, features.row(i), Target::Logit)?, labels[i]);
    }
    Ok(total / idx.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub snapshot_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 16,
            optimizer: Optimizer::Adam,
            seed: 0,
            snapshot_every: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::InvalidArgument(format!(
                "batch_size must lie in 1..={n_train}, got {}",
                self.batch_size
            )));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidArgument("snapshot_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub params: MlpParams,
    /// Mean training-set cross-entropy after the epoch.
    pub train_loss: f64,
    /// `None` when the validation split holds a single class.
    pub val_auc: Option<f64>,
}

struct Adam {
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(zeros: MlpParams) -> Self {
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            let pairs = p
                .weights
                .iter_mut()
                .chain(p.bias.iter_mut())
                .zip(g.weights.iter().chain(&g.bias))
                .zip(m.weights.iter_mut().chain(m.bias.iter_mut()))
                .zip(v.weights.iter_mut().chain(v.bias.iter_mut()));
            for (((p, g), m), v) in pairs {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn zeros_like(params: &MlpParams) -> MlpParams {
    MlpParams {
        layers: params.layers.iter().map(|l| Layer::zeros(l.out_dim, l.in_dim)).collect(),
    }
}

/// Minibatch training with binary cross-entropy. The shuffle order of every
/// epoch is derived from `(cfg.seed, epoch)`, so a run is a pure function of
/// its inputs. Snapshots are taken every `snapshot_every` epochs and at the
/// final epoch; epochs are numbered from 1.
pub fn train(dataset: &Dataset, splits: &DataSplits, arch: &Architecture, cfg: &TrainingConfig) -> Result<Vec<EpochSnapshot>> {
    splits.check(dataset.n())?;
    if arch.input_dim != dataset.k() {
        return Err(Error::Shape(format!(
            "architecture expects {} inputs, dataset has {} features",
            arch.input_dim,
            dataset.k()
        )));
    }
    cfg.validate(splits.train_idx.len())?;

    let x = &dataset.features;
    let y = &dataset.labels;
    let mut params = init_params(arch, cfg.seed);
    let mut adam = Adam::new(zeros_like(&params));
    let mut order = splits.train_idx.clone();
    let val_labels = dataset.labels_at(&splits.val_idx);
    let val_x = x.select_rows(&splits.val_idx);
    let mut snapshots = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.clone_from(&splits.train_idx);
        order.shuffle(&mut rng_from(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zeros_like(&params);
            for &i in batch {
                let pass = forward(&params, x.row(i))?;
                let d_logit = (pass.probability - f64::from(y[i])) / batch.len() as f64;
                accumulate_param_grads(&params, &pass, d_logit, &mut grads);
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grads, cfg.learning_rate),
                Optimizer::Sgd => {
                    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
                        for (p, g) in p.weights.iter_mut().chain(p.bias.iter_mut()).zip(g.weights.iter().chain(&g.bias)) {
                            *p -= cfg.learning_rate * g;
                        }
                    }
                }
            }
        }
        let train_loss = match bce_loss(&params, x, y, &splits.train_idx) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Err(Error::Diverged { epoch, loss: l }),
            Err(_) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
        };
        if epoch % cfg.snapshot_every == 0 || epoch == cfg.epochs {
            let scores = predict_batch(&params, &val_x)?;
            let val_auc = evaluation::auc(&scores, &val_labels).ok();
            snapshots.push(EpochSnapshot {
                epoch,
                params: params.clone(),
                train_loss,
                val_auc,
            });
        }
    }
    Ok(snapshots)
}

/// Positive-class probability for every row.
pub fn predict_batch(params: &MlpParams, x: &Matrix) -> Result<Vec<f64>> {
    if x.rows() > 0 && x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "matrix has {} columns, model expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    x.iter_rows().map(|r| output(params, r, Target::Probability)).collect()
}

/// On-disk form of one snapshot. Floats are written as the shortest decimal
/// that parses back to the same bits (at most 17 significant digits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub architecture: Architecture,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
    pub params: MlpParams,
}

impl SnapshotFile {
    pub fn new(architecture: &Architecture, seed: u64, snapshot: &EpochSnapshot) -> Self {
        Self {
            architecture: architecture.clone(),
            seed,
            epoch: snapshot.epoch,
            train_loss: snapshot.train_loss,
            val_auc: snapshot.val_auc,
            params: snapshot.params.clone(),
        }
    }

    pub fn into_snapshot(self) -> EpochSnapshot {
        EpochSnapshot {
            epoch: self.epoch,
            params: self.params,
            train_loss: self.train_loss,
            val_auc: self.val_auc,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|source| Error::Json {
            context: format!("snapshot epoch {}", self.epoch),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SnapshotFile = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "snapshot".into(),
            source,
        })?;
        if !file.architecture.hidden_dims.is_empty() {
            file.architecture.validate()?;
        }
        file.params.check(&file.architecture)?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
