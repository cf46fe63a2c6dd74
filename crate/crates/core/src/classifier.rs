//! Feedforward classifier `u-64-32-32-32-v` with elu hidden layers, softmax
//! output, categorical cross-entropy and Adam.
//!
//! Parameters live in one flat vector, layer by layer: the `out x in` weight
//! matrix (row-major) followed by the `out` biases. Gradients and Adam moments
//! use the same layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::io::read_f64;
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

pub const HIDDEN: [usize; 4] = [64, 32, 32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Softmax,
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

/// Derivative of elu at `z` given `a = elu(z)`.
fn elu_grad(z: f64, a: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

/// Numerically stable softmax (max subtracted first).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Per-feature affine map `(x - shift) / scale` applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Mean and standard deviation of every column; near-constant columns keep scale 1.
    pub fn fit(inputs: &[Vec<f64>]) -> Result<Self> {
        let n = inputs.len();
        let width = inputs.first().map_or(0, Vec::len);
        if n == 0 || width == 0 {
            return Err(Error::contract("cannot fit input scaling on an empty set"));
        }
        let mut shift = vec![0.0; width];
        for x in inputs {
            for (s, v) in shift.iter_mut().zip(x) {
                *s += v;
            }
        }
        shift.iter_mut().for_each(|s| *s /= n as f64);
        let mut scale = vec![0.0; width];
        for x in inputs {
            for ((q, v), m) in scale.iter_mut().zip(x).zip(&shift) {
                *q += (v - m) * (v - m);
            }
        }
        for (q, m) in scale.iter_mut().zip(&shift) {
            let sd = (*q / n as f64).sqrt();
            *q = if sd > 1e-12 * m.abs().max(1e-300) { sd } else { 1.0 };
        }
        Ok(Self { shift, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
    scaling: Option<InputScaling>,
}

/// Same layout as [`MlpModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl MlpModel {
    /// The standard architecture `[inputs, 64, 32, 32, 32, classes]`.
    pub fn new(inputs: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![inputs];
        dims.extend(HIDDEN);
        dims.push(classes);
        Self::with_dims(dims, seed)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn with_dims(layer_dims: Vec<usize>, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!("invalid layer dims {layer_dims:?}")));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(Error::contract("a classifier needs at least two classes"));
        }
        let mut rng = seeded(seed);
        let mut params = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { layer_dims, params, seed, scaling: None })
    }

    pub fn from_params(layer_dims: Vec<usize>, params: Vec<f64>, seed: u64) -> Result<Self> {
        let mut m = Self::with_dims(layer_dims, seed)?;
        if params.len() != m.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> Vec<Activation> {
        let n = self.layer_dims.len() - 1;
        (0..n).map(|l| if l + 1 == n { Activation::Softmax } else { Activation::Elu }).collect()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_scaling(&self) -> Option<&InputScaling> {
        self.scaling.as_ref()
    }

    pub fn set_input_scaling(&mut self, scaling: Option<InputScaling>) -> Result<()> {
        if let Some(s) = &scaling {
            if s.shift.len() != self.inputs() || s.scale.len() != self.inputs() {
                return Err(Error::contract("input scaling width differs from the model input"));
            }
        }
        self.scaling = scaling;
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// `(weight offset, bias offset)` of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.layer_dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.layer_dims[l] * self.layer_dims[l + 1])
    }

    /// Pre-activations and activations of every layer; `acts[0]` is the input.
    fn trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.layer_dims.len() - 1;
        let mut zs = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(match &self.scaling {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        });
        for l in 0..n {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (wo, bo) = self.offsets(l);
            let a = &acts[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &self.params[wo + o * fan_in..wo + (o + 1) * fan_in];
                    self.params[bo + o] + row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            let next = if l + 1 == n { softmax(&z) } else { z.iter().map(|&v| elu(v)).collect() };
            zs.push(z);
            acts.push(next);
        }
        (zs, acts)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::contract(format!("input has {} values, model expects {}", x.len(), self.inputs())));
        }
        Ok(())
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).1.pop().unwrap())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Categorical cross-entropy `-log p[class]`, probability clamped at 1e-12.
    pub fn loss(&self, x: &[f64], class: usize) -> Result<f64> {
        let p = self.forward(x)?;
        let pc = *p.get(class).ok_or_else(|| Error::contract(format!("class {class} out of range")))?;
        Ok(-pc.max(1e-12).ln())
    }

    /// Mean loss gradient over a batch of `(input, class)` pairs, plus the mean loss.
    pub fn grad(&self, batch: &[(&[f64], usize)]) -> Result<(Gradient, f64)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let n = self.layer_dims.len() - 1;
        let mut g = vec![0.0; self.params.len()];
        let mut total_loss = 0.0;
        for &(x, class) in batch {
            self.check_input(x)?;
            if class >= self.classes() {
                return Err(Error::contract(format!("class {class} out of range")));
            }
            let (zs, acts) = self.trace(x);
            let p = &acts[n];
            total_loss += -p[class].max(1e-12).ln();
            // Softmax + cross-entropy: dL/dz = p - onehot.
            let mut delta = p.clone();
            delta[class] -= 1.0;
            for l in (0..n).rev() {
                let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
                let (wo, bo) = self.offsets(l);
                let a = &acts[l];
                for o in 0..fan_out {
                    let d = delta[o];
                    g[bo + o] += d;
                    if d != 0.0 {
                        for (gw, &av) in g[wo + o * fan_in..wo + (o + 1) * fan_in].iter_mut().zip(a) {
                            *gw += d * av;
                        }
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; fan_in];
                    for (o, &d) in delta.iter().enumerate() {
                        let row = &self.params[wo + o * fan_in..wo + (o + 1) * fan_in];
                        for (pv, &w) in prev.iter_mut().zip(row) {
                            *pv += w * d;
                        }
                    }
                    for (i, pv) in prev.iter_mut().enumerate() {
                        *pv *= elu_grad(zs[l - 1][i], acts[l][i]);
                    }
                    delta = prev;
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        Ok((Gradient(g), total_loss * scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub split_fraction: f64,
    pub seed: u64,
    /// Standardize every input feature with statistics of the training set.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 200,
            batch_size: 32,
            split_fraction: 0.85,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split_fraction must lie in (0, 1), got {}", self.split_fraction)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 {
            return Err(Error::Config("learning_rate and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam needs 0 <= beta < 1 and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_update(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
    }
}

pub fn adam_step(model: &mut MlpModel, g: &Gradient, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if g.0.len() != model.params.len() || state.m.len() != model.params.len() {
        return Err(Error::contract("gradient or optimizer state does not match the model"));
    }
    adam_update(&mut model.params, &g.0, state, cfg);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `N` rows of `u` features.
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Provenance of every row (window ids).
    pub ids: Vec<u64>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize, ids: Vec<u64>) -> Result<Self> {
        let ds = Self { inputs, labels, classes, ids };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.len();
        if self.labels.len() != n || self.ids.len() != n {
            return Err(Error::contract("inputs, labels and ids must have equal length"));
        }
        if self.classes < 2 || self.labels.iter().any(|&l| l >= self.classes) {
            return Err(Error::contract("labels must index fewer than `classes` >= 2 classes"));
        }
        if let Some(u) = self.inputs.first().map(Vec::len) {
            if u == 0 || self.inputs.iter().any(|x| x.len() != u) {
                return Err(Error::contract("all inputs must share one positive width"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.classes];
        v[self.labels[i]] = 1.0;
        v
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

/// Training-set size `ceil(fraction * n)`, robust to the fraction's binary rounding.
pub fn train_size(n: usize, fraction: f64) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Seeded shuffle, first `ceil(split_fraction * N)` rows to training. Reshuffles
/// (up to 100 times) until every class occurs in the training part.
pub fn split(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    cfg.validate()?;
    ds.validate()?;
    if ds.len() < ds.classes {
        return Err(Error::DegenerateDataset(format!("{} samples for {} classes", ds.len(), ds.classes)));
    }
    let n_train = train_size(ds.len(), cfg.split_fraction);
    let mut rng = seeded(derive_seed(cfg.seed, 0x5b1d));
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    for _ in 0..=100 {
        idx.shuffle(&mut rng);
        let mut seen = vec![false; ds.classes];
        for &i in &idx[..n_train] {
            seen[ds.labels[i]] = true;
        }
        if seen.iter().all(|&s| s) {
            return Ok((ds.subset(&idx[..n_train]), ds.subset(&idx[n_train..])));
        }
    }
    Err(Error::DegenerateDataset("a class is missing from the training split after 100 reshuffles".into()))
}

/// Minibatch Adam for `cfg.epochs` epochs. Returns the model and the mean
/// training loss of every epoch.
pub fn train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    cfg.validate()?;
    ds.validate()?;
    if ds.is_empty() {
        return Err(Error::DegenerateDataset("empty training set".into()));
    }
    let mut model = MlpModel::new(ds.width(), ds.classes, derive_seed(cfg.seed, 0x1417))?;
    if cfg.standardize {
        model.set_input_scaling(Some(InputScaling::fit(&ds.inputs)?))?;
    }
    let mut state = AdamState::new(model.params.len());
    let mut rng = seeded(derive_seed(cfg.seed, 0xba7c));
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| (ds.inputs[i].as_slice(), ds.labels[i])).collect();
            let (g, loss) = model.grad(&batch)?;
            if !loss.is_finite() || g.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient in epoch {epoch} (lr {}); check the learning rate and input scale",
                    cfg.learning_rate
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut model, &g, &mut state, cfg)?;
        }
        history.push(loss_sum / ds.len() as f64);
        log::trace!("epoch {epoch}: loss {}", history[epoch]);
    }
    Ok((model, history))
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.correct() as f64 / total as f64
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `None` when the class was never predicted.
    pub fn precision(&self, class: usize) -> Option<f64> {
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        (col > 0).then(|| self.counts[class][class] as f64 / col as f64)
    }

    /// `None` when the class is absent from the test set.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let row: u64 = self.counts[class].iter().sum();
        (row > 0).then(|| self.counts[class][class] as f64 / row as f64)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W, names: &[&str]) -> Result<()> {
        write!(w, "true\\predicted")?;
        for c in 0..self.classes() {
            write!(w, ",{}", names.get(c).copied().unwrap_or("?"))?;
        }
        writeln!(w)?;
        for (c, row) in self.counts.iter().enumerate() {
            write!(w, "{}", names.get(c).copied().unwrap_or("?"))?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn evaluate(model: &MlpModel, test: &LabeledDataset) -> Result<ConfusionMatrix> {
    if test.is_empty() {
        return Err(Error::DegenerateDataset("empty test set".into()));
    }
    if test.classes != model.classes() {
        return Err(Error::contract("test set and model disagree on the class count"));
    }
    let mut cm = ConfusionMatrix::new(test.classes);
    for (x, &label) in test.inputs.iter().zip(&test.labels) {
        cm.counts[label][model.predict(x)?] += 1;
    }
    Ok(cm)
}

/// Early (0) or late (1) label of window `k` out of `k_count`, by the window's
/// centre; the window straddling the midpoint of an odd count has no label.
fn early_late_label(k: usize, k_count: usize) -> Option<usize> {
    match (2 * k + 1).cmp(&k_count) {
        std::cmp::Ordering::Less => Some(0),
        std::cmp::Ordering::Greater => Some(1),
        std::cmp::Ordering::Equal => None,
    }
}

/// Early/late leakage check on the windows of one activity.
///
/// `records[r][k]` is the input vector of window `k` of record `r`. Every early
/// window `k` is paired with the late window `k + ceil(K/2)` of the same record;
/// pairs are dealt into `round(1 / (1 - 0.8)) = 5` folds and a two-class model is
/// trained on the other folds (80 % of the pairs) for each held-out fold. The
/// result is the test accuracy pooled over all folds, so every window is tested
/// exactly once. Features without slow drift give about 0.5.
pub fn early_late_control(records: &[Vec<Vec<f64>>], cfg: &TrainConfig) -> Result<f64> {
    let mut pairs: Vec<(&[f64], &[f64])> = Vec::new();
    for rec in records {
        let k_count = rec.len();
        let half = k_count.div_ceil(2);
        for k in 0..k_count {
            if early_late_label(k, k_count) == Some(0) {
                pairs.push((&rec[k], &rec[k + half]));
            }
        }
    }
    if pairs.len() * 2 < 4 {
        return Err(Error::DegenerateDataset(format!(
            "early/late control needs at least 4 windows, got {}",
            pairs.len() * 2
        )));
    }
    let folds = 5.min(pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut seeded(derive_seed(cfg.seed, 0xea71)));
    let mut correct = 0u64;
    let mut total = 0u64;
    for fold in 0..folds {
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        let mut test_x = Vec::new();
        let mut test_y = Vec::new();
        for (pos, &p) in order.iter().enumerate() {
            let (xs, ys) = if pos % folds == fold { (&mut test_x, &mut test_y) } else { (&mut train_x, &mut train_y) };
            xs.push(pairs[p].0.to_vec());
            ys.push(0);
            xs.push(pairs[p].1.to_vec());
            ys.push(1);
        }
        let n_train = train_x.len() as u64;
        let n_test = test_x.len() as u64;
        let train_ds = LabeledDataset::new(train_x, train_y, 2, (0..n_train).collect())?;
        let test_ds = LabeledDataset::new(test_x, test_y, 2, (0..n_test).collect())?;
        let fold_cfg = TrainConfig { seed: derive_seed(cfg.seed, fold as u64), ..cfg.clone() };
        let (model, _) = train(&train_ds, &fold_cfg)?;
        let cm = evaluate(&model, &test_ds)?;
        correct += cm.correct();
        total += cm.total();
    }
    Ok(correct as f64 / total as f64)
}

const MODEL_MAGIC: &[u8; 4] = b"MMNN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scaling: Option<InputScaling>,
    pub parameters: usize,
}

/// `"MMNN"`, u64 header length, JSON header, then the parameters as LE f64.
pub fn write_checkpoint<W: Write>(w: &mut W, model: &MlpModel, train: Option<&TrainConfig>) -> Result<()> {
    let header = CheckpointHeader {
        layer_dims: model.layer_dims.clone(),
        activations: model.activations(),
        seed: model.seed,
        train: train.cloned(),
        input_scaling: model.scaling.clone(),
        parameters: model.params.len(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &model.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(MlpModel, CheckpointHeader)> {
    let bad = |e: std::io::Error| Error::Format(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(bad)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(Error::Format("checkpoint header too large".into()));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(bad)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let params = (0..header.parameters)
        .map(|_| read_f64(r))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Format(format!("truncated checkpoint parameters: {e}")))?;
    let model = MlpModel::from_params(header.layer_dims.clone(), params, header.seed)
        .and_then(|mut m| m.set_input_scaling(header.input_scaling.clone()).map(|_| m))
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &MlpModel, train: Option<&TrainConfig>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, train)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpModel, CheckpointHeader)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn zero_model(u: usize, v: usize) -> MlpModel {
        let mut m = MlpModel::new(u, v, 0).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        m
    }

    #[test]
    fn zero_model_is_uniform() {
        let p = zero_model(4, 5).forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_two_class_output() {
        // Symmetric final layer: both logits equal.
        let mut m = MlpModel::with_dims(vec![2, 3, 2], 1).unwrap();
        let (wo, _) = m.offsets(1);
        let row: Vec<f64> = m.params[wo..wo + 3].to_vec();
        m.params[wo + 3..wo + 6].copy_from_slice(&row);
        let p = m.forward(&[0.3, 0.3]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    /// Explicit scalar loops: affine, elu, softmax.
    fn oracle_forward(m: &MlpModel, x: &[f64]) -> Vec<f64> {
        let d = m.layer_dims();
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..d.len() - 1 {
            let mut z = vec![0.0; d[l + 1]];
            for o in 0..d[l + 1] {
                let mut s = 0.0;
                for i in 0..d[l] {
                    s += m.params()[off + o * d[l] + i] * a[i];
                }
                z[o] = s + m.params()[off + d[l] * d[l + 1] + o];
            }
            off += d[l] * d[l + 1] + d[l + 1];
            if l + 2 == d.len() {
                let mx = z.iter().cloned().fold(f64::MIN, f64::max);
                let mut e = vec![0.0; z.len()];
                let mut sum = 0.0;
                for i in 0..z.len() {
                    e[i] = (z[i] - mx).exp();
                    sum += e[i];
                }
                for v in &mut e {
                    *v /= sum;
                }
                a = e;
            } else {
                a = z.iter().map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 }).collect();
            }
        }
        a
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let m = MlpModel::new(9, 5, 3).unwrap();
        let mut rng = seeded(4);
        for _ in 0..10 {
            let x: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
            let p = m.forward(&x).unwrap();
            let q = oracle_forward(&m, &x);
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(matches!(m.forward(&[0.0; 8]), Err(Error::Contract(_))));
    }

    #[test]
    fn loss_cases() {
        let m = zero_model(3, 5);
        assert!((m.loss(&[1.0, 2.0, 3.0], 2).unwrap() - 5f64.ln()).abs() < 1e-9);
        // Near-perfect prediction via a huge bias.
        let mut m = zero_model(3, 2);
        let (_, bo) = m.offsets(4);
        m.params[bo] = 30.0;
        assert!(m.loss(&[0.0; 3], 0).unwrap() <= 1e-9);
        let confident_wrong = m.loss(&[0.0; 3], 1).unwrap();
        assert!(confident_wrong.is_finite() && confident_wrong > 20.0);
    }

    #[test]
    fn loss_matches_direct_sum() {
        let m = MlpModel::new(6, 4, 8).unwrap();
        let x = [0.5, -1.0, 2.0, 0.1, 0.0, -0.3];
        let p = m.forward(&x).unwrap();
        let c = [0.0, 0.0, 1.0, 0.0];
        let direct: f64 = -(0..4).map(|i| c[i] * p[i].ln()).sum::<f64>();
        assert!((m.loss(&x, 2).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = MlpModel::new(7, 3, 11).unwrap();
        let mut rng = seeded(12);
        let xs: Vec<Vec<f64>> = (0..2).map(|_| (0..7).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let batch = [(xs[0].as_slice(), 0), (xs[1].as_slice(), 2)];
        let (g, _) = m.grad(&batch).unwrap();
        let mean_loss = |m: &MlpModel| batch.iter().map(|&(x, c)| m.loss(x, c).unwrap()).sum::<f64>() / 2.0;
        let h = 1e-5;
        for i in 0..m.params().len() {
            let mut plus = m.clone();
            plus.params_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[i] -= h;
            let fd = (mean_loss(&plus) - mean_loss(&minus)) / (2.0 * h);
            assert!((fd - g.0[i]).abs() <= 1e-6f64.max(1e-4 * g.0[i].abs()), "param {i}: {fd} vs {}", g.0[i]);
        }
    }

    #[test]
    fn gradient_batch_identities() {
        let m = MlpModel::new(5, 3, 2).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 1.0];
        let single = m.grad(&[(&x, 1)]).unwrap().0;
        let double = m.grad(&[(&x, 1), (&x, 1)]).unwrap().0;
        assert_eq!(single, double);
        assert!(m.grad(&[]).is_err());
    }

    #[test]
    fn adam_single_step() {
        let cfg = TrainConfig::default();
        let mut p = [0.5];
        let mut st = AdamState::new(1);
        adam_update(&mut p, &[1.0], &mut st, &cfg);
        assert!((p[0] - (0.5 - 0.001)).abs() < 1e-9);

        let mut p = [0.5, -1.0];
        let mut st = AdamState::new(2);
        adam_update(&mut p, &[0.0, 0.0], &mut st, &cfg);
        assert_eq!(p, [0.5, -1.0]);
    }

    fn toy(n: usize, seed: u64) -> LabeledDataset {
        // Two classes separated by a margin of 1 along x0 + x1.
        let mut rng = seeded(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        while inputs.len() < n {
            let x: [f64; 2] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let s = x[0] + x[1];
            if s.abs() < 0.5 {
                continue;
            }
            inputs.push(x.to_vec());
            labels.push(usize::from(s > 0.0));
        }
        LabeledDataset::new(inputs, labels, 2, (0..n as u64).collect()).unwrap()
    }

    #[test]
    fn separable_toy_is_learned() {
        let ds = toy(200, 1);
        let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
        let (m, hist) = train(&ds, &cfg).unwrap();
        assert!(evaluate(&m, &ds).unwrap().accuracy() >= 0.99);
        for w in hist[5..].windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{hist:?}");
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = toy(20, 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (m, hist) = train(&ds, &cfg).unwrap();
        assert!(hist.is_empty());
        let mut want = MlpModel::new(2, 2, derive_seed(cfg.seed, 0x1417)).unwrap();
        want.set_input_scaling(Some(InputScaling::fit(&ds.inputs).unwrap())).unwrap();
        assert_eq!(m, want);
    }

    #[test]
    fn input_scaling_standardizes_and_survives_checkpoint() {
        let ds = toy(40, 3);
        let s = InputScaling::fit(&ds.inputs).unwrap();
        let z: Vec<Vec<f64>> = ds.inputs.iter().map(|x| s.apply(x)).collect();
        for j in 0..2 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / z.len() as f64;
            let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / z.len() as f64;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        let constant = InputScaling::fit(&[vec![3.0], vec![3.0]]).unwrap();
        assert_eq!(constant.scale, vec![1.0]);

        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let (m, _) = train(&ds, &cfg).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, Some(&cfg)).unwrap();
        let (back, header) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(header.input_scaling.is_some());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy(60, 3);
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        assert_eq!(train(&ds, &cfg).unwrap(), train(&ds, &cfg).unwrap());
    }

    #[test]
    fn split_sizes() {
        assert_eq!(train_size(1620, 0.85), 1377);
        assert_eq!(train_size(20, 0.85), 17);
        let ds = toy(20, 4);
        let cfg = TrainConfig::default();
        let (a, b) = split(&ds, &cfg).unwrap();
        assert_eq!((a.len(), b.len()), (17, 3));
        assert_eq!(split(&ds, &cfg).unwrap(), (a, b));
    }

    #[test]
    fn split_needs_every_class() {
        let ds = LabeledDataset::new(vec![vec![0.0]; 3], vec![0, 0, 1], 3, vec![0, 1, 2]).unwrap();
        assert!(matches!(split(&ds, &TrainConfig::default()), Err(Error::DegenerateDataset(_))));
    }

    #[test]
    fn confusion_accounting() {
        let mut cm = ConfusionMatrix::new(5);
        for c in 0..5 {
            cm.counts[c][c] = 2;
        }
        assert_eq!(cm.accuracy(), 1.0);
        // Constant predictor on a balanced test set.
        let m = zero_model(1, 5);
        let test = LabeledDataset::new(vec![vec![1.0]; 10], (0..10).map(|i| i % 5).collect(), 5, (0..10).collect()).unwrap();
        let cm = evaluate(&m, &test).unwrap();
        assert_eq!(cm.accuracy(), 0.2);
        assert_eq!(cm.row_sums(), vec![2; 5]);
        assert_eq!(cm.counts[3][0], 2);
        assert_eq!(cm.precision(0), Some(0.2));
        assert_eq!(cm.precision(1), None);
        assert_eq!(cm.recall(0), Some(1.0));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.3, 0.3, 0.4]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = MlpModel::new(3, 2, 5).unwrap();
        let cfg = TrainConfig::default();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, Some(&cfg)).unwrap();
        let (back, header) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.train, Some(cfg));
        assert_eq!(header.activations.last(), Some(&Activation::Softmax));
        buf.pop();
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn early_late_labels() {
        assert_eq!((0..6).map(|k| early_late_label(k, 6)).collect::<Vec<_>>(), [0, 0, 0, 1, 1, 1].map(Some));
        assert_eq!(early_late_label(2, 5), None);
        assert!(early_late_control(&[vec![vec![0.0]; 3]], &TrainConfig::default()).is_err());
    }

    /// 20 records of 6 windows, 8 i.i.d. normal features, plus `drift · k` on every feature.
    fn control_records(seed: u64, drift: f64) -> Vec<Vec<Vec<f64>>> {
        let mut rng = seeded(seed);
        (0..20)
            .map(|_| {
                (0..6)
                    .map(|k| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal) + drift * k as f64).collect())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn control_without_drift_is_near_chance() {
        for seed in 0..10 {
            let cfg = TrainConfig { seed, epochs: 60, ..TrainConfig::default() };
            let acc = early_late_control(&control_records(100 + seed, 0.0), &cfg).unwrap();
            assert!((0.35..=0.65).contains(&acc), "seed {seed}: {acc}");
        }
    }

    #[test]
    fn control_detects_linear_drift() {
        let cfg = TrainConfig { epochs: 60, ..TrainConfig::default() };
        let acc = early_late_control(&control_records(7, 1.0), &cfg).unwrap();
        assert!(acc > 0.9, "{acc}");
    }
}
