//! Multilayer perceptron with inverted dropout, trained by plain SGD on
//! softmax cross-entropy. Everything is f64 and every random draw comes from
//! a seeded generator, so equal configs train to bit-identical weights.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Finite-difference step used by [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Training hyperparameters. `hidden_sizes` lists the widths of the hidden
/// layers; input and output widths come from the data at train time.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![256, 256],
            dropout_rate: 0.2,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn layer_sizes(&self, inputs: usize, classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(classes);
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }
}

/// Dropout masks for one forward pass. Per-example masks are the usual
/// training dropout; per-unit masks share one mask row across the whole
/// batch, which realizes a single thinned network per stochastic pass.
pub(crate) enum Masks<'a> {
    None,
    PerUnit(&'a [Array1<f64>]),
    PerExample(&'a [Array2<f64>]),
}

struct ForwardCache {
    /// Pre-dropout tanh activations per hidden layer.
    hidden: Vec<Array2<f64>>,
    /// Post-dropout activations per hidden layer (inputs to the next layer).
    dropped: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

/// Per-layer weight and bias gradients, in layer order.
type LayerGrads = (Vec<Array2<f64>>, Vec<Array1<f64>>);

/// Feed-forward net with tanh hidden layers and a softmax head.
#[derive(Debug, Clone)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    dropout_rate: f64,
}

impl Mlp {
    /// Fresh net with weights uniform in ±1/sqrt(fan_in) and zero biases.
    pub fn init(layer_sizes: Vec<usize>, dropout_rate: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least input and output layers".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            layer_sizes,
            weights,
            biases,
            dropout_rate,
        })
    }

    /// Builds a net from explicit parameters (snapshot loading, tests).
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        dropout_rate: f64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || weights.len() != layer_sizes.len() - 1 {
            return Err(Error::Config("inconsistent layer structure".into()));
        }
        for (l, w) in layer_sizes.windows(2).enumerate() {
            if weights[l].dim() != (w[0], w[1]) || biases[l].len() != w[1] {
                return Err(Error::Config(format!("layer {l} has the wrong shape")));
            }
        }
        Ok(Mlp {
            layer_sizes,
            weights,
            biases,
            dropout_rate,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    fn apply_mask(&self, a: &Array2<f64>, masks: &Masks, layer: usize) -> Result<Array2<f64>> {
        match masks {
            Masks::None => Ok(a.clone()),
            Masks::PerUnit(m) => {
                if m[layer].len() != a.ncols() {
                    return Err(Error::DimensionMismatch {
                        data: m[layer].len(),
                        expected: a.ncols(),
                    });
                }
                Ok(a * &m[layer])
            }
            Masks::PerExample(m) => {
                if m[layer].dim() != a.dim() {
                    return Err(Error::DimensionMismatch {
                        data: m[layer].nrows(),
                        expected: a.nrows(),
                    });
                }
                Ok(a * &m[layer])
            }
        }
    }

    fn forward_cached(&self, x: ArrayView2<f64>, masks: &Masks) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                data: x.ncols(),
                expected: self.input_dim(),
            });
        }
        let mut hidden = Vec::with_capacity(self.hidden_count());
        let mut dropped = Vec::with_capacity(self.hidden_count());
        let mut input = x.to_owned();
        for l in 0..self.hidden_count() {
            let z = input.dot(&self.weights[l]) + &self.biases[l];
            let a = z.mapv(f64::tanh);
            let d = self.apply_mask(&a, masks, l)?;
            hidden.push(a);
            dropped.push(d.clone());
            input = d;
        }
        let last = self.weights.len() - 1;
        let logits = input.dot(&self.weights[last]) + &self.biases[last];
        Ok(ForwardCache {
            hidden,
            dropped,
            probs: softmax_rows(logits),
        })
    }

    /// Class probabilities without dropout.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, &Masks::None)?.probs)
    }

    /// Class probabilities through fixed per-unit dropout masks — one thinned
    /// network applied to every row.
    pub(crate) fn forward_masked_units(
        &self,
        x: ArrayView2<f64>,
        masks: &[Array1<f64>],
    ) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, &Masks::PerUnit(masks))?.probs)
    }

    fn mean_cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
        let mut sum = 0.0;
        for (row, &y) in probs.rows().into_iter().zip(labels) {
            sum -= row[y].max(1e-12).ln();
        }
        sum / labels.len() as f64
    }

    fn loss_masked(&self, x: ArrayView2<f64>, labels: &[usize], masks: &Masks) -> Result<f64> {
        let cache = self.forward_cached(x, masks)?;
        Ok(Self::mean_cross_entropy(&cache.probs, labels))
    }

    /// Gradients of the mean cross-entropy for one (masked) batch.
    fn grads_masked(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        masks: &Masks,
    ) -> Result<LayerGrads> {
        let cache = self.forward_cached(x, masks)?;
        let batch = x.nrows() as f64;
        let mut delta = cache.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            delta[[i, y]] -= 1.0;
        }
        delta.mapv_inplace(|v| v / batch);

        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            let input = if l == 0 {
                x.to_owned()
            } else {
                cache.dropped[l - 1].clone()
            };
            gw[l] = input.t().dot(&delta);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let upstream = delta.dot(&self.weights[l].t());
                let through_mask = self.apply_mask(&upstream, masks, l - 1)?;
                let a = &cache.hidden[l - 1];
                delta = through_mask * a.mapv(|v| 1.0 - v * v);
            }
        }
        Ok((gw, gb))
    }

    fn sgd_step(&mut self, gw: &[Array2<f64>], gb: &[Array1<f64>], lr: f64) {
        for l in 0..self.weights.len() {
            self.weights[l].scaled_add(-lr, &gw[l]);
            self.biases[l].scaled_add(-lr, &gb[l]);
        }
    }

    fn sample_example_masks(&self, rows: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
        let rate = self.dropout_rate;
        self.layer_sizes[1..self.layer_sizes.len() - 1]
            .iter()
            .map(|&h| {
                if rate == 0.0 {
                    Array2::ones((rows, h))
                } else {
                    let keep = 1.0 / (1.0 - rate);
                    Array2::from_shape_fn((rows, h), |_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                }
            })
            .collect()
    }

    pub(crate) fn sample_unit_masks(&self, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
        let rate = self.dropout_rate;
        self.layer_sizes[1..self.layer_sizes.len() - 1]
            .iter()
            .map(|&h| {
                if rate == 0.0 {
                    Array1::ones(h)
                } else {
                    let keep = 1.0 / (1.0 - rate);
                    Array1::from_shape_fn(h, |_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                }
            })
            .collect()
    }

    /// Writes the parameters as little-endian f64 behind a layer-size header.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter().chain(self.biases[l].iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Reads a snapshot written by [`Mlp::save_snapshot`].
    pub fn load_snapshot(path: &Path, dropout_rate: f64) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut pos = 0usize;
        let truncated = |expected: usize| Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        };
        let take_u32 = |pos: &mut usize| -> Result<u32> {
            if *pos + 4 > bytes.len() {
                return Err(truncated(*pos + 4));
            }
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        let count = take_u32(&mut pos)? as usize;
        if count < 2 {
            return Err(Error::Config("snapshot needs at least two layers".into()));
        }
        let mut layer_sizes = Vec::with_capacity(count);
        for _ in 0..count {
            layer_sizes.push(take_u32(&mut pos)? as usize);
        }
        let take_f64s = |pos: &mut usize, n: usize| -> Result<Vec<f64>> {
            if *pos + 8 * n > bytes.len() {
                return Err(truncated(*pos + 8 * n));
            }
            let vals = bytes[*pos..*pos + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            *pos += 8 * n;
            Ok(vals)
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let flat = take_f64s(&mut pos, w[0] * w[1])?;
            weights.push(Array2::from_shape_vec((w[0], w[1]), flat).expect("length checked above"));
            biases.push(Array1::from_vec(take_f64s(&mut pos, w[1])?));
        }
        Mlp::from_parts(layer_sizes, weights, biases, dropout_rate)
    }
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

/// Trains a fresh net on the given rows. `classes` fixes the output width —
/// the labels present in the batch need not cover every class.
pub fn train_mlp(
    config: &MlpConfig,
    features: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
) -> Result<Mlp> {
    config.validate()?;
    if features.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if features.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.nrows(),
            right: labels.len(),
        });
    }
    if classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelRange {
            value: bad as i64,
            classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::init(
        config.layer_sizes(features.ncols(), classes),
        config.dropout_rate,
        &mut rng,
    )?;
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = features.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let masks = mlp.sample_example_masks(chunk.len(), &mut rng);
            let (gw, gb) = mlp.grads_masked(xb.view(), &yb, &Masks::PerExample(&masks))?;
            mlp.sgd_step(&gw, &gb, config.learning_rate);
        }
    }
    Ok(mlp)
}

/// Compares analytic gradients against central finite differences on one
/// batch, with dropout masks frozen, and returns the worst relative
/// deviation over a random sample of `sample_params` parameters.
pub fn gradient_check(
    mlp: &Mlp,
    features: ArrayView2<f64>,
    labels: &[usize],
    sample_params: usize,
    seed: u64,
) -> Result<f64> {
    if features.nrows() == 0 || features.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.nrows(),
            right: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frozen = mlp.sample_example_masks(features.nrows(), &mut rng);
    let masks = Masks::PerExample(&frozen);
    let (gw, gb) = mlp.grads_masked(features, labels, &masks)?;

    // (layer, is_bias, flat offset) addresses for every parameter.
    let mut params: Vec<(usize, bool, usize)> = Vec::new();
    for l in 0..mlp.weights.len() {
        params.extend((0..mlp.weights[l].len()).map(|k| (l, false, k)));
        params.extend((0..mlp.biases[l].len()).map(|k| (l, true, k)));
    }
    params.shuffle(&mut rng);
    params.truncate(sample_params.max(1));

    let mut work = mlp.clone();
    let mut worst: f64 = 0.0;
    for (l, is_bias, k) in params {
        let analytic = if is_bias {
            gb[l].as_slice().expect("standard layout")[k]
        } else {
            gw[l].as_slice().expect("standard layout")[k]
        };
        let read = |net: &Mlp| {
            if is_bias {
                net.biases[l].as_slice().expect("standard layout")[k]
            } else {
                net.weights[l].as_slice().expect("standard layout")[k]
            }
        };
        let write = |net: &mut Mlp, v: f64| {
            if is_bias {
                net.biases[l].as_slice_mut().expect("standard layout")[k] = v;
            } else {
                net.weights[l].as_slice_mut().expect("standard layout")[k] = v;
            }
        };
        let original = read(&work);
        write(&mut work, original + GRADIENT_CHECK_STEP);
        let plus = work.loss_masked(features, labels, &masks)?;
        write(&mut work, original - GRADIENT_CHECK_STEP);
        let minus = work.loss_masked(features, labels, &masks)?;
        write(&mut work, original);
        let numeric = (plus - minus) / (2.0 * GRADIENT_CHECK_STEP);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
