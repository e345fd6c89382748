//! Fully-connected softmax classifiers.
//!
//! Dense ReLU layers with optional dropout, a softmax head, mean-squared-error
//! loss against one-hot labels, minibatch SGD, and exact backpropagated
//! gradients of the loss with respect to the *input* vector. The input
//! gradient is what every attack in [`crate::attack`] consumes.
//!
//! A network may carry a per-feature affine [`FeatureScaler`]. It is applied
//! inside [`Network::forward`], so callers always work in raw measurement
//! units and gradients come back in raw units too.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

pub const NORMAL: usize = 0;
pub const ATTACK: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
}

/// One dense layer, optionally followed by a dropout layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    /// Dropout probability applied after this layer while training.
    #[serde(default)]
    pub dropout_after: f64,
}

impl LayerSpec {
    pub fn relu(width: usize) -> Self {
        LayerSpec {
            width,
            activation: Activation::Relu,
            dropout_after: 0.0,
        }
    }

    pub fn softmax(width: usize) -> Self {
        LayerSpec {
            width,
            activation: Activation::Softmax,
            dropout_after: 0.0,
        }
    }

    pub fn dropout(mut self, p: f64) -> Self {
        self.dropout_after = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input dimension is zero".into()));
        }
        let Some(last) = self.layers.last() else {
            return Err(Error::InvalidSpec("no layers".into()));
        };
        if last.activation != Activation::Softmax || last.width != 2 {
            return Err(Error::InvalidSpec(
                "final layer must be a width-2 softmax".into(),
            ));
        }
        if last.dropout_after != 0.0 {
            return Err(Error::InvalidSpec("dropout after the output layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return Err(Error::InvalidSpec(format!("layer {i} has zero width")));
            }
            if !(0.0..1.0).contains(&l.dropout_after) {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} dropout {} outside [0, 1)",
                    l.dropout_after
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::InvalidSpec(format!("softmax on hidden layer {i}")));
            }
        }
        Ok(())
    }

    /// Layer count in the Keras sense: every dense layer plus every dropout layer.
    pub fn layer_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 1 + usize::from(l.dropout_after > 0.0))
            .sum()
    }

    /// Power-grid defender: 32-48-56-48-32, dropout, 16, dropout, softmax.
    pub fn fdia_defender(input_dim: usize, seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            layers: vec![
                LayerSpec::relu(32),
                LayerSpec::relu(48),
                LayerSpec::relu(56),
                LayerSpec::relu(48),
                LayerSpec::relu(32).dropout(0.25),
                LayerSpec::relu(16).dropout(0.25),
                LayerSpec::softmax(2),
            ],
            seed,
        }
    }

    /// Power-grid attacker surrogate: 30-40-30, dropout, 20, dropout, softmax.
    pub fn fdia_surrogate(input_dim: usize, seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            layers: vec![
                LayerSpec::relu(30),
                LayerSpec::relu(40),
                LayerSpec::relu(30).dropout(0.25),
                LayerSpec::relu(20).dropout(0.25),
                LayerSpec::softmax(2),
            ],
            seed,
        }
    }

    /// Water-treatment defender: 20-40-30, dropout, 20, dropout, softmax.
    pub fn water_defender(input_dim: usize, seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            layers: vec![
                LayerSpec::relu(20),
                LayerSpec::relu(40),
                LayerSpec::relu(30).dropout(0.25),
                LayerSpec::relu(20).dropout(0.25),
                LayerSpec::softmax(2),
            ],
            seed,
        }
    }

    /// Water-treatment attacker surrogate: 24-32-32-16, softmax.
    pub fn water_surrogate(input_dim: usize, seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            layers: vec![
                LayerSpec::relu(24),
                LayerSpec::relu(32),
                LayerSpec::relu(32),
                LayerSpec::relu(16),
                LayerSpec::softmax(2),
            ],
            seed,
        }
    }
}

/// Per-feature standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// Fits mean and standard deviation per feature. Constant features get std 1.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyDataset)?;
        let d = first.len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// A trained or freshly initialized classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    /// One `out × in` matrix per dense layer.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub scaler: Option<FeatureScaler>,
}

/// Pre- and post-activation values of one forward pass.
struct Trace {
    /// `acts[0]` is the (scaled) input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per layer, empty when inactive.
    masks: Vec<Vec<f64>>,
}

impl Network {
    /// Glorot-uniform weights drawn from `spec.seed`, zero biases.
    pub fn build(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut weights = Vec::with_capacity(spec.layers.len());
        let mut biases = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for layer in &spec.layers {
            let limit = (6.0 / (fan_in + layer.width) as f64).sqrt();
            let data = (0..fan_in * layer.width)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(Matrix::new(layer.width, fan_in, data)?);
            biases.push(vec![0.0; layer.width]);
            fan_in = layer.width;
        }
        Ok(Network {
            spec,
            weights,
            biases,
            scaler: None,
        })
    }

    pub fn with_scaler(mut self, scaler: FeatureScaler) -> Result<Self> {
        check_len("scaler mean", self.spec.input_dim, scaler.mean.len())?;
        check_len("scaler std", self.spec.input_dim, scaler.std.len())?;
        self.scaler = Some(scaler);
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Checks that stored weights agree with the `NetworkSpec` (used after loading).
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_len("weight layers", self.spec.layers.len(), self.weights.len())?;
        check_len("bias layers", self.spec.layers.len(), self.biases.len())?;
        let mut fan_in = self.spec.input_dim;
        for ((layer, w), b) in self.spec.layers.iter().zip(&self.weights).zip(&self.biases) {
            check_len("weight rows", layer.width, w.rows())?;
            check_len("weight cols", fan_in, w.cols())?;
            check_len("bias length", layer.width, b.len())?;
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(0));
            }
            fan_in = layer.width;
        }
        if let Some(s) = &self.scaler {
            check_len("scaler mean", self.spec.input_dim, s.mean.len())?;
            check_len("scaler std", self.spec.input_dim, s.std.len())?;
            if s.std.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
                return Err(Error::InvalidSpec("scaler std must be positive".into()));
            }
        }
        Ok(())
    }

    fn run(&self, input: &[f64], dropout_rng: Option<&mut ChaCha8Rng>) -> Trace {
        let x0 = match &self.scaler {
            Some(s) => s.apply(input),
            None => input.to_vec(),
        };
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        let mut masks = Vec::with_capacity(self.weights.len());
        acts.push(x0);
        let mut rng = dropout_rng;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let prev = &acts[l];
            let spec = &self.spec.layers[l];
            let mut z: Vec<f64> = (0..w.rows())
                .map(|i| b[i] + w.row(i).iter().zip(prev).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            match spec.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Softmax => softmax_in_place(&mut z),
            }
            let mut mask = Vec::new();
            if spec.dropout_after > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let keep = 1.0 - spec.dropout_after;
                    mask = (0..z.len())
                        .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    z.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                }
            }
            masks.push(mask);
            acts.push(z);
        }
        Trace { acts, masks }
    }

    /// Class probabilities with dropout inactive.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), input.len())?;
        Ok(self.run(input, None).acts.pop().unwrap_or_default())
    }

    /// Index of the most probable class.
    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }

    /// MSE loss of the prediction against a one-hot label.
    pub fn loss(&self, input: &[f64], label: usize) -> Result<f64> {
        let p = self.forward(input)?;
        Ok(mse(&p, label))
    }

    /// Backpropagates `dL/d(output)` through a recorded trace and optionally
    /// accumulates parameter gradients. Returns `dL/d(scaled input)`.
    fn backward(
        &self,
        trace: &Trace,
        label: usize,
        mut grads: Option<(&mut [Matrix], &mut [Vec<f64>])>,
    ) -> Vec<f64> {
        let layers = self.weights.len();
        let out = &trace.acts[layers];
        let k = out.len() as f64;
        // dL/dp for L = mean_k (p_k - y_k)^2
        let g: Vec<f64> = out
            .iter()
            .enumerate()
            .map(|(j, p)| 2.0 * (p - one_hot(j, label)) / k)
            .collect();
        let pg: f64 = out.iter().zip(&g).map(|(p, gi)| p * gi).sum();
        let mut delta: Vec<f64> = out.iter().zip(&g).map(|(p, gi)| p * (gi - pg)).collect();

        for l in (0..layers).rev() {
            let w = &self.weights[l];
            let prev = &trace.acts[l];
            if let Some((gw, gb)) = grads.as_mut() {
                for (i, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gb[l][i] += d;
                    let cols = w.cols();
                    let row = &mut gw[l];
                    for j in 0..cols {
                        row[(i, j)] += d * prev[j];
                    }
                }
            }
            let mut up = vec![0.0; w.cols()];
            for (i, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (u, wij) in up.iter_mut().zip(w.row(i)) {
                    *u += d * wij;
                }
            }
            if l > 0 {
                // prev is the post-activation (and post-dropout) output of layer l-1.
                let mask = &trace.masks[l - 1];
                for (j, u) in up.iter_mut().enumerate() {
                    if prev[j] <= 0.0 {
                        *u = 0.0;
                    } else if !mask.is_empty() {
                        *u *= mask[j];
                    }
                }
            }
            delta = up;
        }
        delta
    }

    /// Exact gradient of the MSE loss with respect to the raw input vector.
    pub fn input_gradient(&self, input: &[f64], label: usize) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), input.len())?;
        let trace = self.run(input, None);
        let mut grad = self.backward(&trace, label, None);
        if let Some(s) = &self.scaler {
            grad.iter_mut().zip(&s.std).for_each(|(g, sd)| *g /= sd);
        }
        Ok(grad)
    }

    /// Minibatch SGD on MSE loss. Shuffling and dropout draw from `cfg.seed`.
    pub fn train_sgd(mut self, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        data.check_dim(self.input_dim())?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut gw: Vec<Matrix> = self
            .weights
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut best_acc = f64::NEG_INFINITY;
        let mut stale = 0;
        for _epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                gw.iter_mut().for_each(|m| *m = Matrix::zeros(m.rows(), m.cols()));
                gb.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
                for &idx in batch {
                    let trace = self.run(&data.features[idx], Some(&mut rng));
                    self.backward(&trace, data.labels[idx], Some((&mut gw, &mut gb)));
                }
                let step = cfg.learning_rate / batch.len() as f64;
                for l in 0..self.weights.len() {
                    let w = &mut self.weights[l];
                    for i in 0..w.rows() {
                        for j in 0..w.cols() {
                            w[(i, j)] -= step * gw[l][(i, j)];
                        }
                    }
                    for (b, g) in self.biases[l].iter_mut().zip(&gb[l]) {
                        *b -= step * g;
                    }
                }
            }
            if let Some(patience) = cfg.patience {
                let acc = class_accuracy(&self, data)?;
                if acc > best_acc {
                    best_acc = acc;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
            }
        }
        Ok(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self).map_err(std::io::Error::other)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let net: Network =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        net.validate()
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        Ok(net)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

fn one_hot(j: usize, label: usize) -> f64 {
    if j == label {
        1.0
    } else {
        0.0
    }
}

pub fn mse(probs: &[f64], label: usize) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(j, p)| (p - one_hot(j, label)).powi(2))
        .sum::<f64>()
        / probs.len() as f64
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once training accuracy has not improved for this many epochs.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            patience: Some(5),
        }
    }
}

/// Feature vectors with class labels (0 = normal, 1 = attack).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        check_len("dataset labels", features.len(), labels.len())?;
        if let Some(first) = features.first() {
            for f in &features {
                check_len("dataset feature", first.len(), f.len())?;
            }
        }
        Ok(LabeledDataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, label: usize) {
        self.features.push(x);
        self.labels.push(label);
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        for f in &self.features {
            check_len("dataset feature", dim, f.len())?;
        }
        Ok(())
    }

    /// Splits off the first `ceil(frac · n)` samples as the first part.
    pub fn split(&self, frac: f64) -> (LabeledDataset, LabeledDataset) {
        let cut = ((self.len() as f64) * frac).ceil() as usize;
        let cut = cut.min(self.len());
        (
            LabeledDataset {
                features: self.features[..cut].to_vec(),
                labels: self.labels[..cut].to_vec(),
            },
            LabeledDataset {
                features: self.features[cut..].to_vec(),
                labels: self.labels[cut..].to_vec(),
            },
        )
    }

    /// Writes one sample per line with the label in the last column.
    /// `comment` lines are emitted first, prefixed with `#`.
    pub fn write_csv(&self, path: impl AsRef<Path>, comment: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for c in comment {
            writeln!(w, "# {c}")?;
        }
        for (x, y) in self.features.iter().zip(&self.labels) {
            let mut line: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            line.push(y.to_string());
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut data = LabeledDataset::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let (label, feats) = cells.split_last().expect("split of non-empty line");
            let label: usize = label
                .parse()
                .map_err(|_| Error::malformed(path, format!("line {}: bad label", lineno + 1)))?;
            let x = feats
                .iter()
                .map(|c| {
                    c.parse::<f64>().map_err(|_| {
                        Error::malformed(path, format!("line {}: bad value {c:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = data.features.first() {
                if first.len() != x.len() {
                    return Err(Error::malformed(path, format!("line {}: ragged", lineno + 1)));
                }
            }
            data.push(x, label);
        }
        Ok(data)
    }
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn class_accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for (x, y) in data.features.iter().zip(&data.labels) {
        if net.predict(x)? == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
