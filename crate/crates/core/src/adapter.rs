//! One adapter's sub-model: a linear softmax classifier over encodings.
//!
//! Training runs in f64 on a [`LinearParams`] working copy and the result is
//! rounded to f32 once at the end. Every reduction is a left-to-right loop in
//! a fixed order and transcendental functions come from `libm`, so
//! `train_adapter` is a pure function of its inputs down to the last bit.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::digest::{ids_digest, Digest};
use crate::error::{check_dim, LegoError, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub use_bias: bool,
    pub init_std: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            l2_penalty: 1e-4,
            use_bias: false,
            init_std: 0.01,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LegoError::Config("epochs and batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LegoError::Config("learning rate must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(LegoError::Config("l2 penalty must be non-negative".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(LegoError::Config("init std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Working-precision parameters: row-major `classes x dim` weights and an
/// optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl LinearParams {
    pub fn zeros(classes: usize, dim: usize, use_bias: bool) -> Self {
        LinearParams {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: use_bias.then(|| vec![0.0; classes]),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view over weights then bias.
    pub fn get(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias.as_ref().unwrap()[i - self.weights.len()]
        }
    }

    pub fn get_mut(&mut self, i: usize) -> &mut f64 {
        let w = self.weights.len();
        if i < w {
            &mut self.weights[i]
        } else {
            &mut self.bias.as_mut().unwrap()[i - w]
        }
    }

    fn fill_zero(&mut self) {
        self.weights.iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = self.bias.as_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += scale * other`
    fn add_scaled(&mut self, other: &LinearParams, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&other.weights) {
            *w += scale * g;
        }
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (w, g) in b.iter_mut().zip(gb) {
                *w += scale * g;
            }
        }
    }

    fn logits(&self, encoding: &[f32], out: &mut [f64]) {
        for (c, row) in self.weights.chunks_exact(self.dim).enumerate() {
            let mut z = 0.0f64;
            for (w, e) in row.iter().zip(encoding) {
                z += w * *e as f64;
            }
            if let Some(b) = &self.bias {
                z += b[c];
            }
            out[c] = z;
        }
    }
}

/// Numerically stable softmax in place; returns `log(sum(exp(z)))`.
pub(crate) fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + libm::log(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    classes: usize,
    dim: usize,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub train_seed: u64,
    /// Digest of the ascending id list the model was trained on.
    pub trained_on_hash: Digest,
}

impl AdapterModel {
    /// The untrained uniform predictor.
    pub fn zero(classes: usize, dim: usize, use_bias: bool, train_seed: u64) -> Self {
        AdapterModel {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: use_bias.then(|| vec![0.0; classes]),
            train_seed,
            trained_on_hash: ids_digest(&[]),
        }
    }

    pub fn from_params(params: &LinearParams, train_seed: u64, trained_on_hash: Digest) -> Self {
        AdapterModel {
            classes: params.classes,
            dim: params.dim,
            weights: params.weights.iter().map(|v| *v as f32).collect(),
            bias: params
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| *v as f32).collect()),
            train_seed,
            trained_on_hash,
        }
    }

    pub fn from_parts(
        classes: usize,
        dim: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        train_seed: u64,
        trained_on_hash: Digest,
    ) -> Result<Self> {
        check_dim(classes * dim, weights.len())?;
        if let Some(b) = &bias {
            check_dim(classes, b.len())?;
        }
        let finite = weights.iter().chain(bias.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(LegoError::Validation("non-finite adapter parameter".into()));
        }
        Ok(AdapterModel {
            classes,
            dim,
            weights,
            bias,
            train_seed,
            trained_on_hash,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn params(&self) -> LinearParams {
        LinearParams {
            classes: self.classes,
            dim: self.dim,
            weights: self.weights.iter().map(|v| *v as f64).collect(),
            bias: self
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| *v as f64).collect()),
        }
    }

    /// `softmax(W e + b)`.
    pub fn predict(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        check_dim(self.dim, encoding.len())?;
        let mut z = self.logits_unchecked(encoding);
        softmax_in_place(&mut z);
        Ok(z)
    }

    pub fn logits(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        check_dim(self.dim, encoding.len())?;
        Ok(self.logits_unchecked(encoding))
    }

    fn logits_unchecked(&self, encoding: &[f32]) -> Vec<f64> {
        let mut z = vec![0.0f64; self.classes];
        for (c, row) in self.weights.chunks_exact(self.dim).enumerate() {
            let mut acc = 0.0f64;
            for (w, e) in row.iter().zip(encoding) {
                acc += *w as f64 * *e as f64;
            }
            if let Some(b) = &self.bias {
                acc += b[c] as f64;
            }
            z[c] = acc;
        }
        z
    }

    pub fn loss_and_grad(
        &self,
        batch: &[&Sample],
        config: &TrainerConfig,
    ) -> Result<(f64, LinearParams)> {
        loss_and_grad(&self.params(), batch, config.l2_penalty)
    }
}

/// Mean softmax cross-entropy over `batch` plus `l2 * ||W||^2` (bias not
/// penalized), with its analytic gradient.
pub fn loss_and_grad(
    params: &LinearParams,
    batch: &[&Sample],
    l2: f64,
) -> Result<(f64, LinearParams)> {
    if batch.is_empty() {
        return Err(LegoError::Config("loss over an empty batch".into()));
    }
    for s in batch {
        check_dim(params.dim, s.encoding.len())?;
        if s.label as usize >= params.classes {
            return Err(LegoError::Validation(format!(
                "sample id {} label {} outside [0, {})",
                s.id, s.label, params.classes
            )));
        }
    }
    let mut grad = LinearParams::zeros(params.classes, params.dim, params.bias.is_some());
    let mut scratch = vec![0.0; params.classes];
    let loss = accumulate(params, batch, l2, &mut grad, &mut scratch);
    Ok((loss, grad))
}

/// Core of [`loss_and_grad`] without validation or allocation.
fn accumulate(
    params: &LinearParams,
    batch: &[&Sample],
    l2: f64,
    grad: &mut LinearParams,
    z: &mut [f64],
) -> f64 {
    grad.fill_zero();
    let dim = params.dim;
    let mut loss = 0.0f64;
    for s in batch {
        params.logits(&s.encoding, z);
        let y = s.label as usize;
        let zy = z[y];
        let lse = softmax_in_place(z);
        loss += lse - zy;
        z[y] -= 1.0;
        for (c, gz) in z.iter().enumerate() {
            let row = &mut grad.weights[c * dim..(c + 1) * dim];
            for (g, e) in row.iter_mut().zip(&s.encoding) {
                *g += gz * *e as f64;
            }
        }
        if let Some(gb) = grad.bias.as_mut() {
            for (g, gz) in gb.iter_mut().zip(z.iter()) {
                *g += gz;
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    grad.weights.iter_mut().for_each(|g| *g *= inv);
    if let Some(gb) = grad.bias.as_mut() {
        gb.iter_mut().for_each(|g| *g *= inv);
    }
    if l2 > 0.0 {
        let mut sq = 0.0;
        for (g, w) in grad.weights.iter_mut().zip(&params.weights) {
            sq += w * w;
            *g += 2.0 * l2 * w;
        }
        loss += l2 * sq;
    }
    loss
}

/// Step direction for [`run_epochs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Descent,
    Ascent,
}

/// Mini-batch gradient steps over `samples`, reshuffled each epoch from `rng`.
/// Returns the mean batch loss of each epoch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epochs(
    params: &mut LinearParams,
    samples: &[&Sample],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    l2: f64,
    direction: Direction,
    rng: &mut Rng,
) -> Vec<f64> {
    let mut order: Vec<&Sample> = samples.to_vec();
    let mut grad = LinearParams::zeros(params.classes, params.dim, params.bias.is_some());
    let mut z = vec![0.0; params.classes];
    let step = match direction {
        Direction::Descent => -learning_rate,
        Direction::Ascent => learning_rate,
    };
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.copy_from_slice(samples);
        rng::shuffle(rng, &mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(batch_size) {
            total += accumulate(params, batch, l2, &mut grad, &mut z);
            params.add_scaled(&grad, step);
            batches += 1;
        }
        history.push(if batches == 0 { 0.0 } else { total / batches as f64 });
    }
    history
}

fn check_samples(samples: &[&Sample], classes: usize, dim: usize) -> Result<()> {
    for w in samples.windows(2) {
        if w[0].id >= w[1].id {
            return Err(LegoError::Validation(format!(
                "training samples must be strictly ascending by id ({} before {})",
                w[0].id, w[1].id
            )));
        }
    }
    for s in samples {
        check_dim(dim, s.encoding.len())?;
        if s.label as usize >= classes {
            return Err(LegoError::Validation(format!(
                "sample id {} label {} outside [0, {classes})",
                s.id, s.label
            )));
        }
    }
    Ok(())
}

/// Trains a fresh adapter on `samples` (ascending id order).
///
/// The RNG seeded with `seed` first draws the `C x d` initial weights
/// (row-major, `N(0, init_std^2)`), then one shuffle per epoch. An empty
/// sample list yields the all-zero model without touching the RNG.
pub fn train_adapter(
    samples: &[&Sample],
    classes: usize,
    dim: usize,
    config: &TrainerConfig,
    seed: u64,
) -> Result<AdapterModel> {
    config.validate()?;
    check_samples(samples, classes, dim)?;
    if samples.is_empty() {
        return Ok(AdapterModel::zero(classes, dim, config.use_bias, seed));
    }
    let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    let (params, _) = train_params(samples, classes, dim, config, seed);
    Ok(AdapterModel::from_params(&params, seed, ids_digest(&ids)))
}

/// Training loop shared with the loss-history tests.
pub(crate) fn train_params(
    samples: &[&Sample],
    classes: usize,
    dim: usize,
    config: &TrainerConfig,
    seed: u64,
) -> (LinearParams, Vec<f64>) {
    let mut rng = rng::seeded(seed);
    let mut params = LinearParams::zeros(classes, dim, config.use_bias);
    for w in params.weights.iter_mut() {
        *w = config.init_std * rng::gaussian(&mut rng);
    }
    let history = run_epochs(
        &mut params,
        samples,
        config.epochs,
        config.batch_size,
        config.learning_rate,
        config.l2_penalty,
        Direction::Descent,
        &mut rng,
    );
    (params, history)
}
