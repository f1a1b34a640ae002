//! K-way rectifier classifier trained with softmax cross-entropy.

use super::mlp::{batches, check_loss, check_params, Mlp, Sgd, Trace};
use crate::datagen::LabeledSet;
use crate::error::{arg, Result};
use crate::numerics::{log_sum_exp, softmax, Matrix, RngState};

/// Hyperparameters shared by the trainers in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the auxiliary regularizer in joint objectives.
    pub beta: f64,
    pub seed: u64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Fraction of epochs after which the regularizer is switched on.
    pub reg_start: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 60,
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 5e-4,
            beta: 0.1,
            seed: 0,
            hidden: vec![64, 64],
            reg_start: 2.0 / 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return arg("epochs and batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return arg(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) || !(self.beta >= 0.0) {
            return arg("weight decay and beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.reg_start) {
            return arg(format!("reg_start must be in [0, 1], got {}", self.reg_start));
        }
        if self.hidden.contains(&0) {
            return arg("hidden widths must be positive");
        }
        Ok(())
    }

    /// First epoch at which the regularizer is active.
    pub fn reg_start_epoch(&self) -> usize {
        (self.reg_start * self.epochs as f64).floor() as usize
    }

    pub(crate) fn optimizer(&self, num_params: usize) -> Sgd {
        Sgd::new(self.lr, self.momentum, self.weight_decay, num_params)
    }
}

/// Output of [`MlpClassifier::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub label: usize,
}

/// Rectifier network whose final linear layer emits `num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    net: Mlp,
}

impl MlpClassifier {
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize, rng: &mut RngState) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        Ok(Self {
            net: Mlp::new(&dims, rng)?,
        })
    }

    pub fn from_net(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Width of the representation fed to the final layer.
    pub fn feature_dim(&self) -> usize {
        let d = self.net.dims();
        d[d.len() - 2]
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(x)
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.net.forward_trace(x)
    }

    /// Penultimate activations.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = self.net.forward_trace(x)?;
        Ok(t.penultimate().to_vec())
    }

    pub fn features_matrix(&self, points: &Matrix) -> Result<Matrix> {
        let rows = points
            .iter_rows()
            .map(|x| self.features(x))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let logits = self.logits(x)?;
        let label = argmax(&logits);
        Ok(Prediction { logits, label })
    }

    pub fn predict_labels(&self, points: &Matrix) -> Result<Vec<usize>> {
        points
            .iter_rows()
            .map(|x| self.predict(x).map(|p| p.label))
            .collect()
    }

    pub fn accuracy(&self, data: &LabeledSet) -> Result<f64> {
        let pred = self.predict_labels(&data.points)?;
        let hits = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / data.len() as f64)
    }

    /// Length of [`per_sample_gradient`] vectors: `(feature_dim + 1) · K`.
    pub fn gradient_dim(&self) -> usize {
        (self.feature_dim() + 1) * self.num_classes()
    }
}

/// Index of the largest entry, ties toward the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of `logits` against class `y` and its gradient
/// `softmax(logits) − e_y`.
pub fn cross_entropy(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits).expect("logits are non-empty");
    let mut grad = softmax(logits);
    grad[y] -= 1.0;
    (lse - logits[y], grad)
}

/// Gradient of the cross-entropy at `(x, y)` with respect to the final
/// layer, laid out class by class as `[∂W_k·, ∂b_k]`, i.e. the flattened
/// `(p − e_y) ⊗ [h, 1]`.
pub fn per_sample_gradient(clf: &MlpClassifier, x: &[f64], y: usize) -> Result<Vec<f64>> {
    if y >= clf.num_classes() {
        return arg(format!("label {y} out of range for {} classes", clf.num_classes()));
    }
    let trace = clf.trace(x)?;
    let (_, delta) = cross_entropy(trace.output(), y);
    let h = trace.penultimate();
    let mut g = Vec::with_capacity(clf.gradient_dim());
    for d in delta {
        g.extend(h.iter().map(|a| d * a));
        g.push(d);
    }
    Ok(g)
}

/// Rearranges a per-sample gradient into the parameter layout of the final
/// layer (weights then biases).
pub fn gradient_to_layer_layout(g: &[f64], feature_dim: usize, num_classes: usize) -> Vec<f64> {
    let p = feature_dim;
    let mut out = vec![0.0; g.len()];
    for k in 0..num_classes {
        let row = &g[k * (p + 1)..(k + 1) * (p + 1)];
        out[k * p..(k + 1) * p].copy_from_slice(&row[..p]);
        out[num_classes * p + k] = row[p];
    }
    out
}

pub(crate) fn check_labeled(data: &LabeledSet, input_dim: Option<usize>) -> Result<()> {
    if data.num_classes < 2 {
        return arg(format!("need at least 2 classes, got {}", data.num_classes));
    }
    if let Some(k) = data.class_counts().iter().position(|&c| c == 0) {
        return arg(format!("class {k} has no samples"));
    }
    if let Some(d) = input_dim {
        if data.dim() != d {
            return arg(format!("data has {} dims, model expects {d}", data.dim()));
        }
    }
    Ok(())
}

/// Mean cross-entropy over `batch` and its gradient, accumulated into `grad`.
pub(crate) fn batch_cross_entropy(
    clf: &MlpClassifier,
    data: &LabeledSet,
    batch: &[usize],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let w = scale / batch.len() as f64;
    let mut loss = 0.0;
    for &i in batch {
        let trace = clf.trace(data.points.row(i))?;
        let (l, delta) = cross_entropy(trace.output(), data.labels[i]);
        loss += l;
        clf.net.backward(&trace, &delta, w, grad);
    }
    Ok(loss / batch.len() as f64)
}

/// Trains a fresh classifier by mini-batch SGD on softmax cross-entropy.
pub fn train_erm(data: &LabeledSet, cfg: &TrainConfig) -> Result<MlpClassifier> {
    cfg.validate()?;
    check_labeled(data, None)?;
    let mut rng = RngState::new(cfg.seed);
    let mut clf = MlpClassifier::new(data.dim(), &cfg.hidden, data.num_classes, &mut rng.split(1))?;
    continue_erm(&mut clf, data, cfg, &mut rng)?;
    Ok(clf)
}

/// Runs `cfg.epochs` more epochs of cross-entropy training on `clf`.
pub fn continue_erm(clf: &mut MlpClassifier, data: &LabeledSet, cfg: &TrainConfig, rng: &mut RngState) -> Result<f64> {
    check_labeled(data, Some(clf.input_dim()))?;
    let mut opt = cfg.optimizer(clf.net.num_params());
    let mut grad = vec![0.0; clf.net.num_params()];
    let mut epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        epoch_loss = 0.0;
        let plan = batches(data.len(), cfg.batch_size, rng);
        for batch in &plan {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = batch_cross_entropy(clf, data, batch, 1.0, &mut grad)?;
            check_loss(loss, epoch)?;
            epoch_loss += loss * batch.len() as f64;
            opt.step(clf.net.params_mut(), &grad);
        }
        check_params(clf.net.params(), epoch)?;
        epoch_loss /= data.len() as f64;
    }
    Ok(epoch_loss)
}

/// Mean cross-entropy of `clf` on `data`.
pub fn mean_loss(clf: &MlpClassifier, data: &LabeledSet) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in data.points.iter_rows().zip(&data.labels) {
        total += cross_entropy(&clf.logits(x)?, y).0;
    }
    Ok(total / data.len() as f64)
}
