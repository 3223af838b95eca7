//! Fusion-center classifier: a small tanh MLP over standardized sensing
//! vectors with two output scores `f_0`, `f_1`.
//!
//! The decision boundary is the zero set of the margin `g(x) = f_1(x) - f_0(x)`.
//! Ties go to label 0 (channel unavailable). Gradients are returned with
//! respect to the *raw* input, so the distance methods work in power units.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Dataset, Label};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionScores {
    pub score_0: f64,
    pub score_1: f64,
}

impl PredictionScores {
    pub fn margin(&self) -> f64 {
        self.score_1 - self.score_0
    }

    pub fn label(&self) -> Label {
        if self.score_1 > self.score_0 {
            Label::Available
        } else {
            Label::Unavailable
        }
    }

    pub fn score(&self, label: Label) -> f64 {
        match label {
            Label::Unavailable => self.score_0,
            Label::Available => self.score_1,
        }
    }
}

/// Scores plus their gradients with respect to the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    pub scores: PredictionScores,
    pub grad_0: Vec<f64>,
    pub grad_1: Vec<f64>,
}

impl ScoreGradients {
    /// `∇g = ∇f_1 - ∇f_0`.
    pub fn margin_gradient(&self) -> Vec<f64> {
        self.grad_1.iter().zip(&self.grad_0).map(|(a, b)| a - b).collect()
    }

    pub fn grad(&self, label: Label) -> &[f64] {
        match label {
            Label::Unavailable => &self.grad_0,
            Label::Available => &self.grad_1,
        }
    }
}

/// Anything the distance methods and attacks can query.
pub trait ScoreModel: Sync {
    fn input_dim(&self) -> usize;

    fn scores(&self, x: &[f64]) -> Result<PredictionScores>;

    fn gradients(&self, x: &[f64]) -> Result<ScoreGradients>;

    fn margin(&self, x: &[f64]) -> Result<f64> {
        Ok(self.scores(x)?.margin())
    }

    fn classify(&self, x: &[f64]) -> Result<Label> {
        Ok(self.scores(x)?.label())
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn scores(&self, x: &[f64]) -> Result<PredictionScores> {
        (**self).scores(x)
    }
    fn gradients(&self, x: &[f64]) -> Result<ScoreGradients> {
        (**self).gradients(x)
    }
}

/// Counts forward and gradient evaluations of the wrapped model.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    forwards: AtomicU64,
    gradients: AtomicU64,
}

impl<M: ScoreModel> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            forwards: AtomicU64::new(0),
            gradients: AtomicU64::new(0),
        }
    }

    pub fn forward_calls(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn gradient_calls(&self) -> u64 {
        self.gradients.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.forwards.store(0, Ordering::Relaxed);
        self.gradients.store(0, Ordering::Relaxed);
    }
}

impl<M: ScoreModel> ScoreModel for CountingModel<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn scores(&self, x: &[f64]) -> Result<PredictionScores> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        self.inner.scores(x)
    }
    fn gradients(&self, x: &[f64]) -> Result<ScoreGradients> {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.gradients(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `ln(1 + e^z)`, a smooth ReLU.
    Softplus,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                if z > 30.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            // σ(z) = 1 - e^{-softplus(z)}
            Activation::Softplus => -(-a).exp_m1(),
        }
    }
}

/// Per-feature standardization `z = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalization {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::InvalidModel("normalization lengths differ".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) || std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidModel(
                "normalization statistics must be finite with positive std".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Mean and population std per feature; zero-variance features get std 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, n: usize) -> Result<Self> {
        let mut mean = vec![0.0; n];
        let mut count = 0usize;
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidDataset("cannot fit normalization on no rows".into()));
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; n];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self::new(mean, std)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let s: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(s + self.bias[o]);
        }
    }

    /// `W^T d` for a gradient `d` on this layer's output.
    fn backward_input(&self, d_out: &[f64]) -> Vec<f64> {
        let mut d_in = vec![0.0; self.in_dim];
        for (o, d) in d_out.iter().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for (di, w) in d_in.iter_mut().zip(row) {
                *di += w * d;
            }
        }
        d_in
    }
}

/// The trained fusion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionClassifier {
    layers: Vec<Dense>,
    activation: Activation,
    normalization: Normalization,
}

impl FusionClassifier {
    /// Assemble from explicit parameters. `weights[l]` is row-major
    /// `layer_sizes[l+1] x layer_sizes[l]`.
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
        normalization: Normalization,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidModel("need at least input and output sizes".into()));
        }
        if *layer_sizes.last().unwrap() != 2 {
            return Err(Error::InvalidModel("output layer must have 2 units".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidModel("layer sizes must be positive".into()));
        }
        let nl = layer_sizes.len() - 1;
        if weights.len() != nl || biases.len() != nl {
            return Err(Error::InvalidModel(format!(
                "expected {nl} weight/bias blocks, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        if normalization.mean.len() != layer_sizes[0] {
            return Err(Error::InvalidModel("normalization dimension differs from input".into()));
        }
        let mut layers = Vec::with_capacity(nl);
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (i, o) = (layer_sizes[l], layer_sizes[l + 1]);
            if w.len() != i * o || b.len() != o {
                return Err(Error::InvalidModel(format!("layer {l} has wrong parameter shape")));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {l} has non-finite parameters")));
            }
            layers.push(Dense {
                in_dim: i,
                out_dim: o,
                weights: w,
                bias: b,
            });
        }
        Ok(Self {
            layers,
            activation,
            normalization,
        })
    }

    /// Single-layer model whose margin is exactly `w·x + b` in raw units.
    pub fn affine(w: &[f64], b: f64) -> Result<Self> {
        let n = w.len();
        let mut weights = vec![0.0; 2 * n];
        weights[n..].copy_from_slice(w);
        Self::from_parts(
            &[n, 2],
            vec![weights],
            vec![vec![0.0, b]],
            Activation::Tanh,
            Normalization::identity(n),
        )
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.layers[0].in_dim];
        v.extend(self.layers.iter().map(|l| l.out_dim));
        v
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Raw-unit `(w, b)` of the margin when the model has no hidden layer.
    pub fn affine_margin(&self) -> Option<(Vec<f64>, f64)> {
        let [layer] = self.layers.as_slice() else {
            return None;
        };
        let n = layer.in_dim;
        let (m, s) = (&self.normalization.mean, &self.normalization.std);
        let w: Vec<f64> = (0..n)
            .map(|j| (layer.weights[n + j] - layer.weights[j]) / s[j])
            .collect();
        let b = layer.bias[1] - layer.bias[0] - w.iter().zip(m).map(|(wj, mj)| wj * mj).sum::<f64>();
        Some((w, b))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        let expected = self.layers[0].in_dim;
        if x.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: x.len() });
        }
        Ok(())
    }

    /// Activations per layer; `acts[0]` is the normalized input and the last
    /// entry the output scores.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.normalization.apply(x));
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(&acts[l], &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            acts.push(out);
        }
        acts
    }

    fn scores_unchecked(&self, x: &[f64]) -> PredictionScores {
        let mut cur = self.normalization.apply(x);
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        PredictionScores {
            score_0: cur[0],
            score_1: cur[1],
        }
    }

    /// Backpropagate `d_out` on the output scores down to the raw input.
    fn backprop_to_input(&self, acts: &[Vec<f64>], d_out: &[f64]) -> Vec<f64> {
        let mut d = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            d = self.layers[l].backward_input(&d);
            if l > 0 {
                for (di, a) in d.iter_mut().zip(&acts[l]) {
                    *di *= self.activation.derivative_from_output(*a);
                }
            }
        }
        d.iter().zip(&self.normalization.std).map(|(g, s)| g / s).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Little-endian binary: magic, version, activation, layer sizes,
    /// normalization, then weights and biases per layer.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&[match self.activation {
            Activation::Tanh => 0u8,
            Activation::Softplus => 1u8,
        }])?;
        let sizes = self.layer_sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in &sizes {
            w.write_all(&(*s as u32).to_le_bytes())?;
        }
        let put = |w: &mut W, xs: &[f64]| -> std::io::Result<()> {
            xs.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))
        };
        put(w, &self.normalization.mean)?;
        put(w, &self.normalization.std)?;
        for layer in &self.layers {
            put(w, &layer.weights)?;
            put(w, &layer.bias)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let fmt_err = |m: &str| Error::ModelFormat(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = read_u32(r)?;
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let activation = match act[0] {
            0 => Activation::Tanh,
            1 => Activation::Softplus,
            a => return Err(Error::ModelFormat(format!("unknown activation tag {a}"))),
        };
        let count = read_u32(r)? as usize;
        if !(2..=64).contains(&count) {
            return Err(fmt_err("implausible layer count"));
        }
        let sizes = (0..count)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
            return Err(fmt_err("implausible layer size"));
        }
        let n = sizes[0];
        let mean = read_f64s(r, n)?;
        let std = read_f64s(r, n)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..count - 1 {
            weights.push(read_f64s(r, sizes[l] * sizes[l + 1])?);
            biases.push(read_f64s(r, sizes[l + 1])?);
        }
        Self::from_parts(&sizes, weights, biases, activation, Normalization::new(mean, std)?)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"DDBM";
const MODEL_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

impl ScoreModel for FusionClassifier {
    fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn scores(&self, x: &[f64]) -> Result<PredictionScores> {
        self.check_dim(x)?;
        Ok(self.scores_unchecked(x))
    }

    fn gradients(&self, x: &[f64]) -> Result<ScoreGradients> {
        self.check_dim(x)?;
        let acts = self.forward_trace(x);
        let out = acts.last().unwrap();
        Ok(ScoreGradients {
            scores: PredictionScores {
                score_0: out[0],
                score_1: out[1],
            },
            grad_0: self.backprop_to_input(&acts, &[1.0, 0.0]),
            grad_1: self.backprop_to_input(&acts, &[0.0, 1.0]),
        })
    }
}

/// Margin `g(x) = f_1(x) - f_0(x)`.
pub fn score_margin(model: &impl ScoreModel, x: &[f64]) -> Result<f64> {
    model.margin(x)
}

/// `∇g` with respect to the raw input.
pub fn input_gradient(model: &impl ScoreModel, x: &[f64]) -> Result<Vec<f64>> {
    Ok(model.gradients(x)?.margin_gradient())
}

/// Fraction of `(x, label)` pairs the model gets right.
pub fn accuracy<'a>(model: &impl ScoreModel, samples: impl IntoIterator<Item = (&'a [f64], Label)>) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (x, y) in samples {
        total += 1;
        if model.classify(x)? == y {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidDataset("no samples to evaluate".into()));
    }
    Ok(correct as f64 / total as f64)
}

pub fn dataset_accuracy(model: &impl ScoreModel, dataset: &Dataset) -> Result<f64> {
    accuracy(model, dataset.records().iter().map(|r| (r.values.as_slice(), r.label)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on weights (not biases).
    pub weight_decay: f64,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    /// Stop once training accuracy reaches this value after an epoch.
    pub target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-2,
            hidden_sizes: vec![32, 32],
            activation: Activation::Softplus,
            seed: 17,
            target_accuracy: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden sizes must be positive"));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::config("target_accuracy must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(FusionClassifier, TrainReport)> {
    let samples: Vec<(&[f64], Label)> = dataset
        .records()
        .iter()
        .map(|r| (r.values.as_slice(), r.label))
        .collect();
    train_on(&samples, config)
}

/// Mini-batch SGD with momentum on softmax cross-entropy. Deterministic in
/// `(samples, config)`.
pub fn train_on(samples: &[(&[f64], Label)], config: &TrainConfig) -> Result<(FusionClassifier, TrainReport)> {
    config.validate()?;
    let Some(&(first, _)) = samples.first() else {
        return Err(Error::InvalidDataset("no training samples".into()));
    };
    let n = first.len();
    if samples.iter().any(|(x, _)| x.len() != n) {
        return Err(Error::InvalidDataset("training samples differ in dimension".into()));
    }
    if !samples.iter().any(|s| s.1 == Label::Unavailable) || !samples.iter().any(|s| s.1 == Label::Available) {
        return Err(Error::InvalidDataset("training data must contain both labels".into()));
    }

    let normalization = Normalization::fit(samples.iter().map(|s| s.0), n)?;
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| normalization.apply(s.0)).collect();

    let mut sizes = vec![n];
    sizes.extend(&config.hidden_sizes);
    sizes.push(2);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in sizes.windows(2) {
        let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
        weights.push((0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect());
        biases.push(vec![0.0; w[1]]);
    }
    let mut model =
        FusionClassifier::from_parts(&sizes, weights, biases, config.activation, Normalization::identity(n))?;

    let mut vel_w: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut vel_b: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
    let mut grad_w = vel_w.clone();
    let mut grad_b = vel_b.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        epochs_run: 0,
        final_loss: f64::NAN,
        train_accuracy: 0.0,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad_w.iter_mut().flatten().for_each(|g| *g = 0.0);
            grad_b.iter_mut().flatten().for_each(|g| *g = 0.0);
            for &i in batch {
                epoch_loss += model.accumulate_sample(&inputs[i], samples[i].1, &mut grad_w, &mut grad_b);
            }
            let scale = config.learning_rate / batch.len() as f64;
            for (l, layer) in model.layers.iter_mut().enumerate() {
                for ((p, v), g) in layer.weights.iter_mut().zip(&mut vel_w[l]).zip(&grad_w[l]) {
                    *v = config.momentum * *v - scale * g - config.learning_rate * config.weight_decay * *p;
                    *p += *v;
                }
                for ((p, v), g) in layer.bias.iter_mut().zip(&mut vel_b[l]).zip(&grad_b[l]) {
                    *v = config.momentum * *v - scale * g;
                    *p += *v;
                }
            }
        }
        let mean_loss = epoch_loss / samples.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let correct = inputs
            .iter()
            .zip(samples)
            .filter(|(z, s)| model.scores_unchecked(z).label() == s.1)
            .count();
        report = TrainReport {
            epochs_run: epoch + 1,
            final_loss: mean_loss,
            train_accuracy: correct as f64 / samples.len() as f64,
        };
        if report.train_accuracy >= config.target_accuracy {
            break;
        }
    }

    // Fold standardization into the model so it consumes raw inputs.
    model.normalization = normalization;
    Ok((model, report))
}

impl FusionClassifier {
    /// Adds parameter gradients of the cross-entropy at one (normalized)
    /// input; returns the loss.
    fn accumulate_sample(&self, z: &[f64], label: Label, grad_w: &mut [Vec<f64>], grad_b: &mut [Vec<f64>]) -> f64 {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(z.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(&acts[l], &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            acts.push(out);
        }
        let logits = acts.last().unwrap();
        let mx = logits[0].max(logits[1]);
        let e0 = (logits[0] - mx).exp();
        let e1 = (logits[1] - mx).exp();
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let y = label.index();
        let loss = -(p[y].max(1e-300)).ln();

        let mut d: Vec<f64> = (0..2).map(|k| p[k] - if k == y { 1.0 } else { 0.0 }).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            for (o, dv) in d.iter().enumerate() {
                grad_b[l][o] += dv;
                let row = &mut grad_w[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += dv * x;
                }
            }
            if l > 0 {
                let mut d_in = layer.backward_input(&d);
                for (di, a) in d_in.iter_mut().zip(input) {
                    *di *= self.activation.derivative_from_output(*a);
                }
                d = d_in;
            }
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ChannelScenario, SensingVector};

    fn toy_separable() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let records = (0..400)
            .map(|i| {
                let label = if i % 2 == 0 {
                    Label::Unavailable
                } else {
                    Label::Available
                };
                let c = if label == Label::Unavailable { 10.0 } else { 2.0 };
                SensingVector {
                    timeslot: i,
                    values: vec![c + rng.random::<f64>(), c + rng.random::<f64>()],
                    label,
                }
            })
            .collect();
        Dataset::from_records(records, None, None).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            hidden_sizes: vec![8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let (model, report) = train(&toy_separable(), &small_config()).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        assert_eq!(dataset_accuracy(&model, &toy_separable()).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&toy_separable(), &small_config()).unwrap();
        let b = train(&toy_separable(), &small_config()).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn tie_breaks_to_label_zero() {
        let s = PredictionScores {
            score_0: 0.3,
            score_1: 0.3,
        };
        assert_eq!(s.label(), Label::Unavailable);
        let m = FusionClassifier::affine(&[1.0, -1.0], 0.0).unwrap();
        assert_eq!(m.classify(&[2.0, 2.0]).unwrap(), Label::Unavailable);
        assert_eq!(m.classify(&[2.0, 1.0]).unwrap(), Label::Available);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = FusionClassifier::affine(&[1.0, -1.0], 0.0).unwrap();
        assert!(matches!(
            m.scores(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(m.gradients(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn linear_model_gradient_is_weight_difference() {
        let w = [0.5, -2.0, 1.25];
        let m = FusionClassifier::affine(&w, 0.7).unwrap();
        for x in [[0.0, 0.0, 0.0], [3.0, 1.0, 9.0]] {
            let g = m.gradients(&x).unwrap();
            assert_eq!(g.margin_gradient(), w.to_vec());
            assert_eq!(input_gradient(&m, &x).unwrap(), w.to_vec());
            let expect = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + 0.7;
            assert!((score_margin(&m, &x).unwrap() - expect).abs() < 1e-12);
        }
        let (aw, ab) = m.affine_margin().unwrap();
        assert_eq!(aw, w.to_vec());
        assert!((ab - 0.7).abs() < 1e-15);
    }

    #[test]
    fn margin_gradient_is_difference_of_score_gradients() {
        let (model, _) = train(&toy_separable(), &small_config()).unwrap();
        let g = model.gradients(&[5.0, 6.0]).unwrap();
        let diff: Vec<f64> = g.grad_1.iter().zip(&g.grad_0).map(|(a, b)| a - b).collect();
        assert_eq!(g.margin_gradient(), diff);
    }

    #[test]
    fn normalization_is_part_of_the_model() {
        let (model, _) = train(&toy_separable(), &small_config()).unwrap();
        let x = [4.0, 7.5];
        let norm = model.normalization().clone();
        let z = norm.apply(&x);
        let mut stripped = model.clone();
        stripped.normalization = Normalization::identity(2);
        assert_eq!(model.scores(&x).unwrap(), stripped.scores(&z).unwrap());
    }

    #[test]
    fn scores_are_pure() {
        let (model, _) = train(&toy_separable(), &small_config()).unwrap();
        let x = [6.0, 6.0];
        assert_eq!(model.scores(&x).unwrap(), model.scores(&x).unwrap());
    }

    #[test]
    fn persistence_round_trip_is_bit_exact() {
        let (model, _) = train(&toy_separable(), &small_config()).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = FusionClassifier::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(model, back);
        let x = [3.3, 9.1];
        assert_eq!(
            model.scores(&x).unwrap().score_1.to_bits(),
            back.scores(&x).unwrap().score_1.to_bits()
        );
        buf[0] = b'X';
        assert!(FusionClassifier::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn rejects_single_label_training() {
        let records = (0..10)
            .map(|i| SensingVector {
                timeslot: i,
                values: vec![1.0],
                label: Label::Available,
            })
            .collect();
        let d = Dataset::from_records(records, None, None).unwrap();
        assert!(train(&d, &small_config()).is_err());
    }

    #[test]
    fn counting_model_counts() {
        let m = CountingModel::new(FusionClassifier::affine(&[1.0], 0.0).unwrap());
        m.scores(&[1.0]).unwrap();
        m.classify(&[1.0]).unwrap();
        m.gradients(&[1.0]).unwrap();
        assert_eq!((m.forward_calls(), m.gradient_calls()), (2, 1));
        m.reset();
        assert_eq!(m.forward_calls(), 0);
    }

    #[test]
    fn extreme_scenario_scores_label_zero_for_h0_draws() {
        let s = ChannelScenario::new(8, vec![5.0; 4], vec![0.5; 4], 0.5).unwrap();
        let train_set = Dataset::generate(&s, 1000, 3).unwrap();
        let (model, _) = train(&train_set, &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..200 {
            let v = s.sample_timeslot(Label::Unavailable, i, &mut rng);
            let sc = model.scores(&v.values).unwrap();
            assert!(sc.score_0 > sc.score_1);
        }
    }
}
