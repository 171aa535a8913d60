//! Three-layer fully connected action classifier.
//!
//! Two rectified hidden layers followed by a softmax output, trained with
//! plain mini-batch gradient descent on mean cross-entropy.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detection::{generate_synthetic, FrameDetections, SyntheticMotionSpec};
use crate::pose_features::{FeatureExtractor, FEATURE_DIM};
use crate::vocab::ActionLabel;

const MODEL_MAGIC: &str = "stepguide-mlp";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().copied());
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Weights and biases of the three layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: [Dense; 3],
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: [usize; 2], output: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(input, hidden[0]),
                Dense::zeros(hidden[0], hidden[1]),
                Dense::zeros(hidden[1], output),
            ],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(input: usize, hidden: [usize; 2], output: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden, output);
        for layer in &mut p.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[2].outputs
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(ClassifierError::Shape(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(ClassifierError::Shape(format!("layer {i} buffers do not match {}x{}", l.outputs, l.inputs)));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(ClassifierError::Shape(format!("layer {i} input does not match layer {} output", i - 1)));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(ClassifierError::Shape(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Visits every scalar parameter in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

struct Trace {
    /// Post-activation outputs of the two hidden layers.
    hidden: [Vec<f64>; 2],
    logits: Vec<f64>,
}

fn check_input(features: &[f64], params: &MlpParams) -> Result<()> {
    if features.len() != params.input_dim() {
        return Err(ClassifierError::Shape(format!(
            "expected {} features, got {}",
            params.input_dim(),
            features.len()
        )));
    }
    Ok(())
}

fn trace(features: &[f64], params: &MlpParams) -> Trace {
    let mut h0 = Vec::new();
    params.layers[0].apply(features, &mut h0);
    h0.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut h1 = Vec::new();
    params.layers[1].apply(&h0, &mut h1);
    h1.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut logits = Vec::new();
    params.layers[2].apply(&h1, &mut logits);
    Trace { hidden: [h0, h1], logits }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub fn logits(features: &[f64], params: &MlpParams) -> Result<Vec<f64>> {
    check_input(features, params)?;
    Ok(trace(features, params).logits)
}

/// Class probabilities.
pub fn forward(features: &[f64], params: &MlpParams) -> Result<Vec<f64>> {
    Ok(softmax(&logits(features, params)?))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(features: &[f64], params: &MlpParams) -> Result<usize> {
    Ok(argmax(&forward(features, params)?))
}

/// Mean cross-entropy over the batch and its gradient.
pub fn loss_and_gradient(batch: &[(&[f64], usize)], params: &MlpParams) -> Result<(f64, MlpParams)> {
    if batch.is_empty() {
        return Err(ClassifierError::InvalidInput("empty batch".into()));
    }
    let classes = params.output_dim();
    let [l0, l1, l2] = &params.layers;
    let mut grad = MlpParams::zeros(l0.inputs, [l0.outputs, l1.outputs], classes);
    let mut loss = 0.0;
    let mut d_h1 = vec![0.0; l1.outputs];
    let mut d_h0 = vec![0.0; l0.outputs];

    for &(x, label) in batch {
        check_input(x, params)?;
        if label >= classes {
            return Err(ClassifierError::InvalidInput(format!("label {label} out of range for {classes} classes")));
        }
        let t = trace(x, params);
        loss += log_sum_exp(&t.logits) - t.logits[label];

        let mut d_logits = softmax(&t.logits);
        d_logits[label] -= 1.0;

        backprop_layer(l2, &mut grad.layers[2], &t.hidden[1], &d_logits, &mut d_h1);
        for (d, h) in d_h1.iter_mut().zip(&t.hidden[1]) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        backprop_layer(l1, &mut grad.layers[1], &t.hidden[0], &d_h1, &mut d_h0);
        for (d, h) in d_h0.iter_mut().zip(&t.hidden[0]) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        accumulate_layer(&mut grad.layers[0], x, &d_h0);
    }

    let n = batch.len() as f64;
    grad.values_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

fn accumulate_layer(grad: &mut Dense, input: &[f64], d_out: &[f64]) {
    for (o, &d) in d_out.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.bias[o] += d;
        let row = &mut grad.weights[o * grad.inputs..(o + 1) * grad.inputs];
        for (g, v) in row.iter_mut().zip(input) {
            *g += d * v;
        }
    }
}

fn backprop_layer(layer: &Dense, grad: &mut Dense, input: &[f64], d_out: &[f64], d_in: &mut [f64]) {
    accumulate_layer(grad, input, d_out);
    d_in.iter_mut().for_each(|v| *v = 0.0);
    for (o, &d) in d_out.iter().enumerate() {
        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
        for (di, w) in d_in.iter_mut().zip(row) {
            *di += d * w;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: [usize; 2],
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, batch_size: 32, epochs: 60, seed: 7, hidden: [64, 32] }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidInput("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden.contains(&0) {
            return Err(ClassifierError::InvalidInput("batch size, epochs and hidden sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Labeled feature vectors over a fixed class list.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub labels: Vec<ActionLabel>,
    pub samples: Vec<(Vec<f64>, usize)>,
}

impl Dataset {
    pub fn new(labels: Vec<ActionLabel>) -> Self {
        Self { labels, samples: Vec::new() }
    }

    pub fn push(&mut self, features: Vec<f64>, label: &ActionLabel) -> Result<()> {
        let idx = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ClassifierError::InvalidInput(format!("action {label} is not a registered class")))?;
        self.samples.push((features, idx));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Deterministic shuffled split; the first part holds `train_fraction` of the samples.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (self.samples.len() as f64 * train_fraction).round() as usize;
        let pick = |range: &[usize]| Dataset {
            labels: self.labels.clone(),
            samples: range.iter().map(|&i| self.samples[i].clone()).collect(),
        };
        (pick(&idx[..cut]), pick(&idx[cut..]))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for (_, c) in &self.samples {
            counts[*c] += 1;
        }
        counts
    }

    /// Adds every complete feature window of a single-action stream; returns how many.
    pub fn push_stream(&mut self, frames: &[FrameDetections], label: &ActionLabel) -> Result<usize> {
        let mut extractor: Option<(f64, FeatureExtractor)> = None;
        let mut added = 0;
        for f in frames {
            let aspect = f.aspect();
            if extractor.as_ref().map_or(true, |(a, _)| *a != aspect) {
                let ex = FeatureExtractor::new(aspect).map_err(|e| ClassifierError::InvalidInput(e.to_string()))?;
                extractor = Some((aspect, ex));
            }
            let (_, ex) = extractor.as_mut().expect("set above");
            let Some(skeleton) = &f.skeleton else {
                ex.skip();
                continue;
            };
            if let Ok(Some(v)) = ex.push(skeleton) {
                self.push(v.into_inner(), label)?;
                added += 1;
            }
        }
        Ok(added)
    }
}

/// Recipe for a generated training set: `clips` streams per action, each with
/// preset motion jittered by up to `jitter` (relative) in amplitude and frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub actions: Vec<ActionLabel>,
    pub clips: usize,
    pub clip_frames: u32,
    pub noise_sigma: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn new(actions: &[&str], seed: u64) -> Self {
        Self {
            actions: actions.iter().map(|a| ActionLabel::new(*a)).collect(),
            clips: 8,
            clip_frames: 60,
            noise_sigma: 0.002,
            jitter: 0.15,
            seed,
        }
    }

    /// The jittered motion spec of every clip, grouped by action in `actions` order.
    pub fn clip_specs(&self) -> Result<Vec<SyntheticMotionSpec>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.actions.len() * self.clips);
        for action in &self.actions {
            for _ in 0..self.clips {
                let mut spec = SyntheticMotionSpec::preset(action.as_str(), self.clip_frames, self.noise_sigma, rng.gen())
                    .map_err(|e| ClassifierError::InvalidInput(e.to_string()))?;
                let mut scale = || 1.0 + self.jitter * (2.0 * rng.gen::<f64>() - 1.0);
                spec.amplitude *= scale();
                spec.frequency_hz *= scale();
                out.push(spec);
            }
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<Dataset> {
        let mut ds = Dataset::new(self.actions.clone());
        for spec in self.clip_specs()? {
            let frames = generate_synthetic(&spec).map_err(|e| ClassifierError::InvalidInput(e.to_string()))?;
            ds.push_stream(&frames, &spec.action)?;
        }
        Ok(ds)
    }
}

/// Mini-batch gradient descent; deterministic for a fixed seed.
pub fn train(dataset: &Dataset, config: &TrainingConfig) -> Result<MlpParams> {
    train_with_history(dataset, config).map(|(p, _)| p)
}

/// Like [`train`] but also returns the mean training loss of every epoch.
pub fn train_with_history(dataset: &Dataset, config: &TrainingConfig) -> Result<(MlpParams, Vec<f64>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ClassifierError::InvalidInput("empty dataset".into()));
    }
    if dataset.labels.is_empty() {
        return Err(ClassifierError::InvalidInput("dataset has no classes".into()));
    }
    let input = dataset.samples[0].0.len();
    if dataset.samples.iter().any(|(x, _)| x.len() != input) {
        return Err(ClassifierError::Shape("samples have differing lengths".into()));
    }
    if dataset.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        warn!("training set contains a single class; the classifier will be trivial");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::init(input, config.hidden, dataset.labels.len(), &mut rng);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> =
                chunk.iter().map(|&i| (dataset.samples[i].0.as_slice(), dataset.samples[i].1)).collect();
            let (loss, grad) = loss_and_gradient(&batch, &params)?;
            epoch_loss += loss * batch.len() as f64;
            if config.learning_rate > 0.0 {
                for (p, g) in params.values_mut().zip(grad.values()) {
                    *p -= config.learning_rate * g;
                }
            }
        }
        history.push(epoch_loss / dataset.len() as f64);
    }
    Ok((params, history))
}

/// Per-input affine map `(x - mean) * scale` applied before the network.
///
/// Raw feature vectors mix normalized positions (around 2) with velocities two
/// orders of magnitude smaller; without this, gradient descent only learns the
/// class prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Zero mean, unit variance per input; constant inputs get scale 1.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        let Some((first, _)) = dataset.samples.first() else {
            return Err(ClassifierError::InvalidInput("empty dataset".into()));
        };
        let dim = first.len();
        let n = dataset.len() as f64;
        let mut mean = vec![0.0; dim];
        for (x, _) in &dataset.samples {
            if x.len() != dim {
                return Err(ClassifierError::Shape("samples have differing lengths".into()));
            }
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for (x, _) in &dataset.samples {
            var.iter_mut().zip(x).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        let scale = var.iter().map(|v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect()
    }

    pub fn transform(&self, dataset: &Dataset) -> Dataset {
        Dataset {
            labels: dataset.labels.clone(),
            samples: dataset.samples.iter().map(|(x, c)| (self.apply(x), *c)).collect(),
        }
    }
}

/// Trained network together with its class names and input standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    pub labels: Vec<ActionLabel>,
    pub scaler: Standardizer,
    pub params: MlpParams,
}

impl ActionModel {
    /// Model with an identity standardizer.
    pub fn new(labels: Vec<ActionLabel>, params: MlpParams) -> Result<Self> {
        let scaler = Standardizer::identity(params.input_dim());
        Self::with_scaler(labels, scaler, params)
    }

    pub fn with_scaler(labels: Vec<ActionLabel>, scaler: Standardizer, params: MlpParams) -> Result<Self> {
        params.validate()?;
        if scaler.dim() != params.input_dim() || scaler.scale.len() != scaler.dim() {
            return Err(ClassifierError::Shape(format!(
                "standardizer has {} inputs, network {}",
                scaler.dim(),
                params.input_dim()
            )));
        }
        if labels.len() != params.output_dim() {
            return Err(ClassifierError::Shape(format!(
                "{} labels for {} outputs",
                labels.len(),
                params.output_dim()
            )));
        }
        if params.input_dim() != FEATURE_DIM {
            warn!("model input dimension {} differs from the feature dimension {FEATURE_DIM}", params.input_dim());
        }
        Ok(Self { labels, scaler, params })
    }

    /// Fits the standardizer on `dataset`, then trains on the standardized samples.
    pub fn train(dataset: &Dataset, config: &TrainingConfig) -> Result<Self> {
        Self::train_with_history(dataset, config).map(|(m, _)| m)
    }

    pub fn train_with_history(dataset: &Dataset, config: &TrainingConfig) -> Result<(Self, Vec<f64>)> {
        let scaler = Standardizer::fit(dataset)?;
        let (params, history) = train_with_history(&scaler.transform(dataset), config)?;
        Ok((Self::with_scaler(dataset.labels.clone(), scaler, params)?, history))
    }

    fn class_index(&self, features: &[f64]) -> Result<usize> {
        check_input(features, &self.params)?;
        predict(&self.scaler.apply(features), &self.params)
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>> {
        check_input(features, &self.params)?;
        forward(&self.scaler.apply(features), &self.params)
    }

    pub fn predict(&self, features: &[f64]) -> Result<&ActionLabel> {
        Ok(&self.labels[self.class_index(features)?])
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        Ok(self.confusion(dataset)?.accuracy())
    }

    pub fn confusion(&self, dataset: &Dataset) -> Result<Confusion> {
        let remap: Vec<usize> = dataset
            .labels
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|m| m == l)
                    .ok_or_else(|| ClassifierError::InvalidInput(format!("dataset class {l} unknown to model")))
            })
            .collect::<Result<_>>()?;
        let n = self.labels.len();
        let mut counts = vec![vec![0usize; n]; n];
        for (x, c) in &dataset.samples {
            counts[remap[*c]][self.class_index(x)?] += 1;
        }
        Ok(Confusion { labels: self.labels.clone(), counts })
    }

    /// Writes the text model format.
    ///
    /// ```text
    /// stepguide-mlp 1
    /// labels <C>
    /// <label>            (C lines)
    /// scaler <inputs>
    /// <mean_0 .. mean_inputs-1>
    /// <scale_0 .. scale_inputs-1>
    /// layer <inputs> <outputs>
    /// <w_0 .. w_inputs-1>    (outputs lines, one row each)
    /// <b_0 .. b_outputs-1>
    /// (three layer blocks)
    /// end
    /// ```
    ///
    /// Numbers are shortest round-trip decimals in exponent form, separated by single spaces.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(s, "labels {}", self.labels.len());
        for l in &self.labels {
            let _ = writeln!(s, "{l}");
        }
        let join = |vals: &[f64]| vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "scaler {}", self.scaler.dim());
        let _ = writeln!(s, "{}", join(&self.scaler.mean));
        let _ = writeln!(s, "{}", join(&self.scaler.scale));
        for layer in &self.params.layers {
            let _ = writeln!(s, "layer {} {}", layer.inputs, layer.outputs);
            for row in layer.weights.chunks_exact(layer.inputs) {
                let _ = writeln!(s, "{}", join(row));
            }
            let _ = writeln!(s, "{}", join(&layer.bias));
        }
        s.push_str("end\n");
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("model text is UTF-8")
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(ClassifierError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
            }
        };
        let perr = |line, msg: String| ClassifierError::Parse { line, msg };

        let (n, header) = next("header")?;
        if header.trim() != format!("{MODEL_MAGIC} {MODEL_VERSION}") {
            return Err(perr(n, format!("unsupported header {header:?}")));
        }
        let (n, l) = next("labels")?;
        let count: usize = l
            .strip_prefix("labels ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| perr(n, "expected `labels <count>`".into()))?;
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next("label")?;
            let l = l.trim();
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(perr(n, format!("invalid label {l:?}")));
            }
            labels.push(ActionLabel::new(l));
        }
        let parse_row = |n: usize, l: &str, len: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = l
                .split(' ')
                .map(|t| t.parse::<f64>().map_err(|e| perr(n, format!("bad number {t:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(perr(n, format!("expected {len} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let (n, l) = next("scaler")?;
        let dim: usize = l
            .strip_prefix("scaler ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| perr(n, "expected `scaler <inputs>`".into()))?;
        let (n, l) = next("scaler mean")?;
        let mean = parse_row(n, &l, dim)?;
        let (n, l) = next("scaler scale")?;
        let scale = parse_row(n, &l, dim)?;
        let mut layers = Vec::with_capacity(3);
        for _ in 0..3 {
            let (n, l) = next("layer")?;
            let dims: Vec<usize> = l
                .strip_prefix("layer ")
                .map(|r| r.split(' ').filter_map(|t| t.parse().ok()).collect())
                .unwrap_or_default();
            let [inputs, outputs] = dims[..] else {
                return Err(perr(n, "expected `layer <inputs> <outputs>`".into()));
            };
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                let (n, l) = next("weight row")?;
                weights.extend(parse_row(n, &l, inputs)?);
            }
            let (n, l) = next("bias row")?;
            let bias = parse_row(n, &l, outputs)?;
            layers.push(Dense { inputs, outputs, weights, bias });
        }
        let (n, l) = next("end")?;
        if l.trim() != "end" {
            return Err(perr(n, "expected `end`".into()));
        }
        let layers: [Dense; 3] = layers.try_into().expect("three layers parsed");
        Self::with_scaler(labels, Standardizer { mean, scale }, MlpParams { layers })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    pub labels: Vec<ActionLabel>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        match self.total() {
            0 => 0.0,
            t => correct as f64 / t as f64,
        }
    }

    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let row: usize = self.counts[class].iter().sum();
        (row > 0).then(|| self.counts[class][class] as f64 / row as f64)
    }
}
