//! Adapter keys and nearest-key activation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingDataset;
use crate::error::{check_dim, LegoError, Result};
use crate::rng;

pub const DEFAULT_PERTURB_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyInitConfig {
    pub n: usize,
    /// Multiplier on the per-dimension std of the training encodings.
    pub perturb_scale: f64,
    pub seed: u64,
}

impl KeyInitConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        KeyInitConfig {
            n,
            perturb_scale: DEFAULT_PERTURB_SCALE,
            seed,
        }
    }
}

/// The fixed addresses of the `n` adapters in encoding space.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySet {
    keys: Vec<f32>,
    n: usize,
    dim: usize,
    pub init_seed: u64,
    pub perturb_std: Vec<f64>,
}

impl KeySet {
    pub fn from_parts(
        keys: Vec<Vec<f32>>,
        init_seed: u64,
        perturb_std: Vec<f64>,
    ) -> Result<Self> {
        let n = keys.len();
        if n == 0 {
            return Err(LegoError::Config("a key set needs at least one key".into()));
        }
        let dim = keys[0].len();
        if dim == 0 {
            return Err(LegoError::Config("keys must have dimension >= 1".into()));
        }
        for k in &keys {
            check_dim(dim, k.len())?;
            if k.iter().any(|v| !v.is_finite()) {
                return Err(LegoError::Validation("non-finite key component".into()));
            }
        }
        check_dim(dim, perturb_std.len())?;
        Ok(KeySet {
            keys: keys.concat(),
            n,
            dim,
            init_seed,
            perturb_std,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn key(&self, j: usize) -> &[f32] {
        &self.keys[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.keys.chunks_exact(self.dim)
    }
}

/// The `k` activated adapters for one encoding, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub adapter_ids: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Draws `n` training samples without replacement and perturbs their
/// encodings into keys.
///
/// The RNG stream is consumed in a fixed order: first the `n` sample indices
/// (over the dataset in ascending id order), then `n * d` standard normals,
/// key-major. Key `j`, component `i` is
/// `encoding[i] + perturb_scale * std_i * z`, computed in f64 and rounded to f32.
pub fn init_keys(train: &EmbeddingDataset, config: &KeyInitConfig) -> Result<KeySet> {
    let big_n = train.len();
    if config.n == 0 || config.n > big_n {
        return Err(LegoError::Config(format!(
            "adapter count n = {} must lie in [1, N = {big_n}]",
            config.n
        )));
    }
    if !(config.perturb_scale >= 0.0 && config.perturb_scale.is_finite()) {
        return Err(LegoError::Config(format!(
            "perturb scale {} must be a non-negative finite number",
            config.perturb_scale
        )));
    }
    let dim = train.dim();
    let std = per_dim_std(train);
    let perturb_std: Vec<f64> = std.iter().map(|s| s * config.perturb_scale).collect();

    let mut rng = rng::seeded(config.seed);
    let drawn = rng::sample_without_replacement(&mut rng, big_n, config.n);
    let samples = train.samples();
    let mut keys = Vec::with_capacity(config.n);
    for idx in drawn {
        let enc = &samples[idx].encoding;
        let key: Vec<f32> = (0..dim)
            .map(|i| (enc[i] as f64 + perturb_std[i] * rng::gaussian(&mut rng)) as f32)
            .collect();
        keys.push(key);
    }
    KeySet::from_parts(keys, config.seed, perturb_std)
}

/// Population standard deviation of each encoding dimension (two-pass).
fn per_dim_std(ds: &EmbeddingDataset) -> Vec<f64> {
    let dim = ds.dim();
    let n = ds.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for s in ds.samples() {
        for (m, v) in mean.iter_mut().zip(&s.encoding) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; dim];
    for s in ds.samples() {
        for i in 0..dim {
            let d = s.encoding[i] as f64 - mean[i];
            var[i] += d * d;
        }
    }
    var.into_iter().map(|v| (v / n).sqrt()).collect()
}

#[inline]
pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Euclidean distance, accumulated in f64 left to right.
pub fn distance(encoding: &[f32], key: &[f32]) -> Result<f64> {
    check_dim(key.len(), encoding.len())?;
    Ok(squared_distance(encoding, key).sqrt())
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Exact k-nearest keys by partial selection; ties go to the lower index.
pub fn activate(encoding: &[f32], keys: &KeySet, k: usize) -> Result<Activation> {
    let n = keys.len();
    if k == 0 || k > n {
        return Err(LegoError::Config(format!("k = {k} must lie in [1, n = {n}]")));
    }
    check_dim(keys.dim(), encoding.len())?;
    let mut pairs: Vec<(f64, usize)> = keys
        .iter()
        .enumerate()
        .map(|(j, key)| (squared_distance(encoding, key), j))
        .collect();
    if k < n {
        pairs.select_nth_unstable_by(k - 1, by_distance_then_index);
        pairs.truncate(k);
    }
    pairs.sort_unstable_by(by_distance_then_index);
    Ok(Activation {
        adapter_ids: pairs.iter().map(|p| p.1).collect(),
        distances: pairs.iter().map(|p| p.0.sqrt()).collect(),
    })
}
