//! Minimal ML core.
//!
//! Three model kinds cover the desk-scale tasks: binary/multinomial logistic
//! regression, a one-vs-rest linear SVM, and a single-hidden-layer tanh MLP.
//! Training is mini-batch SGD with momentum; aggregation is data-size
//! weighted parameter averaging. A pooled-data training oracle with identical
//! initialization provides the reference point for weight-divergence
//! measurements.

use crate::dist::{DiffusionChain, Dol, PueId};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training diverged: non-finite {what}")]
    Diverged { what: &'static str },
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Supported model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Logistic,
    LinearSvm,
    Mlp,
}

/// Shape of a model: kind plus the dimensions that fix the parameter count,
/// and the serialized size of one parameter in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub n_classes: usize,
    /// Hidden units; only meaningful for the MLP.
    pub hidden: usize,
    pub bits_per_param: u32,
}

impl ModelShape {
    pub fn param_count(&self) -> usize {
        let d = self.input_dim + 1; // bias folded in
        match self.kind {
            // Two-class logistic regression uses a single sigmoid unit.
            ModelKind::Logistic if self.n_classes == 2 => d,
            ModelKind::Logistic => self.n_classes * d,
            ModelKind::LinearSvm => self.n_classes * d,
            ModelKind::Mlp => self.hidden * d + self.n_classes * (self.hidden + 1),
        }
    }
}

/// Flat parameter vector with its shape tag; the unit of transmission and
/// aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    shape: ModelShape,
    weights: Vec<f64>,
}

impl ModelParams {
    /// Uniform initialization in [-0.05, 0.05].
    pub fn init<R: Rng>(shape: ModelShape, rng: &mut R) -> Self {
        let weights = (0..shape.param_count())
            .map(|_| rng.random_range(-0.05..0.05))
            .collect();
        Self { shape, weights }
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            weights: vec![0.0; shape.param_count()],
            shape,
        }
    }

    pub fn from_weights(shape: ModelShape, weights: Vec<f64>) -> Result<Self, LearnError> {
        if weights.len() != shape.param_count() {
            return Err(LearnError::Mismatch(format!(
                "expected {} weights, got {}",
                shape.param_count(),
                weights.len()
            )));
        }
        Ok(Self { shape, weights })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Serialized size in bits: parameter count times bits per parameter.
    pub fn bit_size(&self) -> u64 {
        self.weights.len() as u64 * u64::from(self.shape.bits_per_param)
    }
}

/// One model as carried by a user during a communication round.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub params: ModelParams,
    pub dol: Dol,
    pub chain: DiffusionChain,
    pub holder: PueId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            local_epochs: 1,
        }
    }
}

/// In-memory labeled dataset, row-major features.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        n_classes: usize,
    ) -> Result<Self, LearnError> {
        if labels.is_empty() || features.len() != labels.len() * dim {
            return Err(LearnError::Dataset(format!(
                "shape mismatch: {} features, {} labels, dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(LearnError::Dataset(format!(
                "label {bad} out of range (C = {n_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Loads the documented CSV layout: one sample per row, integer label
    /// first, then the feature values. No header.
    pub fn load_csv(path: &Path, n_classes: usize) -> Result<Self, LearnError> {
        let text = std::fs::read_to_string(path).map_err(|source| LearnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let label: usize = fields
                .next()
                .unwrap()
                .trim()
                .parse()
                .map_err(|_| LearnError::Dataset(format!("line {}: bad label", lineno + 1)))?;
            let row: Result<Vec<f64>, _> = fields.map(|f| f.trim().parse::<f64>()).collect();
            let row = row
                .map_err(|_| LearnError::Dataset(format!("line {}: bad feature", lineno + 1)))?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(LearnError::Dataset(format!(
                        "line {}: expected {d} features, got {}",
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            labels.push(label);
            features.extend(row);
        }
        let dim = dim.ok_or_else(|| LearnError::Dataset("empty file".into()))?;
        Self::new(features, labels, dim, n_classes)
    }
}

/// Synthetic Gaussian-mixture classification task. Class means sit at
/// mutually orthogonal directions scaled so that neighboring classes are
/// `class_sep` standard deviations apart; features have unit noise.
pub fn synthetic_gaussians<R: Rng>(
    n_train: usize,
    n_test: usize,
    dim: usize,
    n_classes: usize,
    class_sep: f64,
    rng: &mut R,
) -> (Dataset, Dataset) {
    assert!(n_classes >= 2 && dim >= n_classes, "need dim >= n_classes");
    // Orthonormal class directions via Gram-Schmidt on Gaussian draws.
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    while dirs.len() < n_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        for d in &dirs {
            let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(d) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            dirs.push(v);
        }
    }
    let scale = class_sep / std::f64::consts::SQRT_2;
    let mut gen = |n: usize| {
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % n_classes; // balanced by construction
            for j in 0..dim {
                features.push(scale * dirs[y][j] + standard_normal(rng));
            }
            labels.push(y);
        }
        Dataset::new(features, labels, dim, n_classes).expect("consistent by construction")
    };
    let train = gen(n_train);
    let test = gen(n_test);
    (train, test)
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Class scores for one sample. Binary logistic reports `[0, logit]` so that
/// argmax works uniformly across kinds.
fn scores(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let shape = params.shape;
    let d = shape.input_dim;
    let w = &params.weights;
    let linear = |row: &[f64]| -> f64 {
        let mut s = row[d]; // bias
        for j in 0..d {
            s += row[j] * x[j];
        }
        s
    };
    match shape.kind {
        ModelKind::Logistic if shape.n_classes == 2 => vec![0.0, linear(w)],
        ModelKind::Logistic | ModelKind::LinearSvm => (0..shape.n_classes)
            .map(|c| linear(&w[c * (d + 1)..(c + 1) * (d + 1)]))
            .collect(),
        ModelKind::Mlp => {
            let h = shape.hidden;
            let mut hidden = vec![0.0; h];
            for k in 0..h {
                hidden[k] = linear(&w[k * (d + 1)..(k + 1) * (d + 1)]).tanh();
            }
            let base = h * (d + 1);
            (0..shape.n_classes)
                .map(|c| {
                    let row = &w[base + c * (h + 1)..base + (c + 1) * (h + 1)];
                    let mut s = row[h];
                    for k in 0..h {
                        s += row[k] * hidden[k];
                    }
                    s
                })
                .collect()
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in s.iter_mut() {
        *v /= sum;
    }
}

/// Loss of one sample and its gradient accumulated into `grad` (scaled by
/// `weight`). Returns the loss value.
fn accumulate_gradient(
    params: &ModelParams,
    x: &[f64],
    y: usize,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let shape = params.shape;
    let d = shape.input_dim;
    let w = &params.weights;
    match shape.kind {
        ModelKind::Logistic if shape.n_classes == 2 => {
            // Sigmoid cross-entropy; gradient (sigma(w.x) - y) * x.
            let mut z = w[d];
            for j in 0..d {
                z += w[j] * x[j];
            }
            let p = sigmoid(z);
            let err = p - y as f64;
            for j in 0..d {
                grad[j] += weight * err * x[j];
            }
            grad[d] += weight * err;
            let eps = 1e-12;
            if y == 1 {
                -(p.max(eps)).ln()
            } else {
                -((1.0 - p).max(eps)).ln()
            }
        }
        ModelKind::Logistic => {
            let mut p = scores(params, x);
            softmax_in_place(&mut p);
            let loss = -(p[y].max(1e-12)).ln();
            for c in 0..shape.n_classes {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                let row = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
                for j in 0..d {
                    row[j] += weight * err * x[j];
                }
                row[d] += weight * err;
            }
            loss
        }
        ModelKind::LinearSvm => {
            // One-vs-rest hinge: sum_c max(0, 1 - t_c s_c), t_c = +-1.
            let s = scores(params, x);
            let mut loss = 0.0;
            for c in 0..shape.n_classes {
                let t = if c == y { 1.0 } else { -1.0 };
                let margin = 1.0 - t * s[c];
                if margin > 0.0 {
                    loss += margin;
                    let row = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
                    for j in 0..d {
                        row[j] += weight * (-t) * x[j];
                    }
                    row[d] += weight * (-t);
                }
            }
            loss
        }
        ModelKind::Mlp => {
            let h = shape.hidden;
            let mut hidden = vec![0.0; h];
            for k in 0..h {
                let row = &w[k * (d + 1)..(k + 1) * (d + 1)];
                let mut z = row[d];
                for j in 0..d {
                    z += row[j] * x[j];
                }
                hidden[k] = z.tanh();
            }
            let base = h * (d + 1);
            let mut p: Vec<f64> = (0..shape.n_classes)
                .map(|c| {
                    let row = &w[base + c * (h + 1)..base + (c + 1) * (h + 1)];
                    let mut s = row[h];
                    for k in 0..h {
                        s += row[k] * hidden[k];
                    }
                    s
                })
                .collect();
            softmax_in_place(&mut p);
            let loss = -(p[y].max(1e-12)).ln();
            let mut dhidden = vec![0.0; h];
            for c in 0..shape.n_classes {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                let wrow = &w[base + c * (h + 1)..base + (c + 1) * (h + 1)];
                let grow = &mut grad[base + c * (h + 1)..base + (c + 1) * (h + 1)];
                for k in 0..h {
                    grow[k] += weight * err * hidden[k];
                    dhidden[k] += err * wrow[k];
                }
                grow[h] += weight * err;
            }
            for k in 0..h {
                let dz = dhidden[k] * (1.0 - hidden[k] * hidden[k]);
                let grow = &mut grad[k * (d + 1)..(k + 1) * (d + 1)];
                for j in 0..d {
                    grow[j] += weight * dz * x[j];
                }
                grow[d] += weight * dz;
            }
            loss
        }
    }
}

/// Mean loss over a set of samples.
pub fn mean_loss(params: &ModelParams, data: &Dataset, indices: &[usize]) -> f64 {
    assert!(!indices.is_empty());
    let mut scratch = vec![0.0; params.weights.len()];
    let mut total = 0.0;
    for &i in indices {
        let (x, y) = data.sample(i);
        total += accumulate_gradient(params, x, y, 0.0, &mut scratch);
    }
    total / indices.len() as f64
}

/// Runs `epochs` passes of shuffled mini-batch SGD with momentum over the
/// given sample indices. The momentum buffer starts at zero, so handing a
/// model to a new trainer implicitly resets optimizer state. Deterministic
/// for a given random stream.
pub fn train_epochs<R: Rng>(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    hp: &Hyperparams,
    epochs: usize,
    rng: &mut R,
) -> Result<ModelParams, LearnError> {
    assert!(!indices.is_empty(), "training set must be non-empty");
    assert_eq!(data.dim(), params.shape.input_dim, "feature dim mismatch");
    let mut w = params.clone();
    let n_params = w.weights.len();
    let mut velocity = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = indices.to_vec();
    for _ in 0..epochs {
        order.shuffle(rng);
        for batch in order.chunks(hp.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                let (x, y) = data.sample(i);
                loss += scale * accumulate_gradient(&w, x, y, scale, &mut grad);
            }
            if !loss.is_finite() {
                return Err(LearnError::Diverged { what: "loss" });
            }
            for k in 0..n_params {
                if !grad[k].is_finite() {
                    return Err(LearnError::Diverged { what: "gradient" });
                }
                velocity[k] = hp.momentum * velocity[k] + grad[k];
                w.weights[k] -= hp.learning_rate * velocity[k];
            }
        }
    }
    Ok(w)
}

/// One local training pass: `local_epochs` epochs of SGD on the holder's
/// samples.
pub fn local_train<R: Rng>(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<ModelParams, LearnError> {
    train_epochs(params, data, indices, hp, hp.local_epochs, rng)
}

/// Reference model trained on the pooled dataset with the same
/// hyperparameters and the same initial weights as the federated run.
pub fn centralized_oracle<R: Rng>(
    init: &ModelParams,
    data: &Dataset,
    hp: &Hyperparams,
    epochs: usize,
    rng: &mut R,
) -> Result<ModelParams, LearnError> {
    if epochs == 0 {
        return Ok(init.clone());
    }
    let all: Vec<usize> = (0..data.len()).collect();
    train_epochs(init, data, &all, hp, epochs, rng)
}

/// Max relative error between the analytic gradient and a central finite
/// difference (h = 1e-5) on one sample.
pub fn gradient_check(params: &ModelParams, x: &[f64], y: usize) -> f64 {
    let n = params.weights.len();
    let mut analytic = vec![0.0; n];
    accumulate_gradient(params, x, y, 1.0, &mut analytic);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut scratch = vec![0.0; n];
    for k in 0..n {
        let mut plus = params.clone();
        plus.weights[k] += h;
        let mut minus = params.clone();
        minus.weights[k] -= h;
        scratch.iter_mut().for_each(|g| *g = 0.0);
        let lp = accumulate_gradient(&plus, x, y, 0.0, &mut scratch);
        let lm = accumulate_gradient(&minus, x, y, 0.0, &mut scratch);
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (analytic[k] - numeric).abs() / (analytic[k].abs() + 1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Data-size-weighted average of the local models' parameters; the weights
/// are the diffusion-chain sizes.
pub fn fedavg(models: &[LocalModel]) -> Result<ModelParams, LearnError> {
    let first = models
        .first()
        .ok_or_else(|| LearnError::Mismatch("no models to aggregate".into()))?;
    let shape = first.params.shape;
    let n = first.params.weights.len();
    let mut total_size = 0u64;
    for m in models {
        if m.params.shape != shape || m.params.weights.len() != n {
            return Err(LearnError::Mismatch(
                "models differ in kind or dimension".into(),
            ));
        }
        total_size += m.chain.total_size();
    }
    if total_size == 0 {
        return Err(LearnError::Mismatch("total chain size is zero".into()));
    }
    let mut weights = vec![0.0; n];
    for m in models {
        let coeff = m.chain.total_size() as f64 / total_size as f64;
        for (acc, &w) in weights.iter_mut().zip(&m.params.weights) {
            *acc += coeff * w;
        }
    }
    Ok(ModelParams { shape, weights })
}

/// Euclidean norm of the parameter gap between two models of identical
/// shape.
pub fn weight_divergence(a: &ModelParams, b: &ModelParams) -> Result<f64, LearnError> {
    if a.shape != b.shape {
        return Err(LearnError::Mismatch(
            "weight divergence across different shapes".into(),
        ));
    }
    Ok(a
        .weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Fraction of samples whose argmax score matches the label. Ties resolve to
/// the lowest class index.
pub fn evaluate(params: &ModelParams, data: &Dataset, indices: &[usize]) -> f64 {
    assert!(!indices.is_empty(), "test set must be non-empty");
    let mut correct = 0usize;
    for &i in indices {
        let (x, y) = data.sample(i);
        let s = scores(params, x);
        let mut best = 0usize;
        for (c, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    correct as f64 / indices.len() as f64
}
