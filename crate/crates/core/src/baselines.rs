//! Comparison systems on the same fixed encodings: a single linear head
//! (with Re-Train, Tune and NGrad unlearning) and FixSISA, a shard ensemble
//! sharing the fixed encoder.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adapter::{run_epochs, train_adapter, AdapterModel, Direction, TrainerConfig};
use crate::data::{EmbeddingDataset, Sample};
use crate::digest::{ids_digest, Digest};
use crate::error::{LegoError, Result};
use crate::lego_model::{argmax, record_samples};
use crate::parallel::map_indexed;
use crate::rng::{self, mix};

/// Plain continuation of gradient steps, used by Tune (descent) and NGrad
/// (ascent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl StepConfig {
    pub const TUNE_DEFAULT: StepConfig = StepConfig {
        epochs: 2,
        batch_size: 32,
        learning_rate: 0.05,
    };
    pub const NGRAD_DEFAULT: StepConfig = StepConfig {
        epochs: 5,
        batch_size: 32,
        learning_rate: 0.05,
    };

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LegoError::Config(
                "step config needs batch size >= 1 and a positive learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// One linear head over the whole encoding space.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleHeadModel {
    pub model: AdapterModel,
    pub trained_ids: Vec<u64>,
    pub trainer: TrainerConfig,
    pub seed: u64,
    pub data_digest: Digest,
}

impl SingleHeadModel {
    /// Trains on every sample of `train` with seed `mix(seed, 0)`, the same
    /// seed a one-shard FixSISA gives its only shard.
    pub fn fit(train: &EmbeddingDataset, trainer: &TrainerConfig, seed: u64) -> Result<Self> {
        let refs: Vec<&Sample> = train.samples().iter().collect();
        let model = train_adapter(&refs, train.num_classes(), train.dim(), trainer, mix(seed, 0))?;
        Ok(SingleHeadModel {
            model,
            trained_ids: train.ids(),
            trainer: *trainer,
            seed,
            data_digest: train.digest(),
        })
    }

    /// Re-Train: fit from scratch on the trained ids minus `ids`.
    pub fn retrain_without(&self, ids: &[u64], train: &EmbeddingDataset) -> Result<Self> {
        let removed = known_subset(&self.trained_ids, ids)?;
        let keep: BTreeSet<u64> = self
            .trained_ids
            .iter()
            .copied()
            .filter(|id| !removed.contains(id))
            .collect();
        let retained = restricted(train, &keep)?;
        Self::fit(&retained, &self.trainer, self.seed)
    }

    /// Tune: keep descending from the current parameters on `retain`.
    pub fn tune(&self, retain: &EmbeddingDataset, steps: &StepConfig, seed: u64) -> Result<Self> {
        steps.validate()?;
        let refs: Vec<&Sample> = retain.samples().iter().collect();
        let mut params = self.model.params();
        let mut rng = rng::seeded(seed);
        run_epochs(
            &mut params,
            &refs,
            steps.epochs,
            steps.batch_size,
            steps.learning_rate,
            self.trainer.l2_penalty,
            Direction::Descent,
            &mut rng,
        );
        let mut out = self.clone();
        out.model = AdapterModel::from_params(&params, self.model.train_seed, self.model.trained_on_hash);
        out.trained_ids = retain.ids();
        out.data_digest = retain.digest();
        Ok(out)
    }

    /// NGrad: gradient ascent on the cross-entropy of the samples to forget.
    pub fn ngrad(&self, forget: &EmbeddingDataset, steps: &StepConfig, seed: u64) -> Result<Self> {
        steps.validate()?;
        let refs: Vec<&Sample> = forget.samples().iter().collect();
        let mut params = self.model.params();
        let mut rng = rng::seeded(seed);
        run_epochs(
            &mut params,
            &refs,
            steps.epochs,
            steps.batch_size,
            steps.learning_rate,
            0.0,
            Direction::Ascent,
            &mut rng,
        );
        let forgotten: BTreeSet<u64> = forget.ids().into_iter().collect();
        let mut out = self.clone();
        out.model = AdapterModel::from_params(&params, self.model.train_seed, self.model.trained_on_hash);
        out.trained_ids.retain(|id| !forgotten.contains(id));
        Ok(out)
    }

    pub fn infer(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        self.model.predict(encoding)
    }

    pub fn classify(&self, encoding: &[f32]) -> Result<usize> {
        Ok(argmax(&self.infer(encoding)?))
    }
}

/// Deterministic shard of `id`: `mix(seed, id) mod s`.
pub fn shard_of(id: u64, seed: u64, shards: usize) -> usize {
    (mix(seed, id) % shards as u64) as usize
}

/// `s` linear heads over disjoint random shards; inference averages all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct FixSisaModel {
    pub shards: Vec<Vec<u64>>,
    pub models: Vec<AdapterModel>,
    pub trainer: TrainerConfig,
    pub seed: u64,
    pub data_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixSisaReport {
    pub retrained_shards: Vec<usize>,
    pub retrained_samples: usize,
}

impl FixSisaModel {
    pub fn fit(
        train: &EmbeddingDataset,
        s: usize,
        trainer: &TrainerConfig,
        seed: u64,
        threads: usize,
    ) -> Result<Self> {
        if s == 0 || s > train.len() {
            return Err(LegoError::Config(format!(
                "shard count s = {s} must lie in [1, N = {}]",
                train.len()
            )));
        }
        let mut shards = vec![Vec::new(); s];
        for id in train.ids() {
            shards[shard_of(id, seed, s)].push(id);
        }
        let mut model = FixSisaModel {
            models: Vec::new(),
            shards,
            trainer: *trainer,
            seed,
            data_digest: train.digest(),
        };
        let all: Vec<usize> = (0..s).collect();
        model.models = model.train_shards(train, &all, threads)?;
        Ok(model)
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    fn train_shards(
        &self,
        train: &EmbeddingDataset,
        which: &[usize],
        threads: usize,
    ) -> Result<Vec<AdapterModel>> {
        map_indexed(threads, which.len(), |i| {
            let sh = which[i];
            let samples = record_samples(train, &self.shards[sh])?;
            train_adapter(
                &samples,
                train.num_classes(),
                train.dim(),
                &self.trainer,
                mix(self.seed, sh as u64),
            )
        })
        .into_iter()
        .collect()
    }

    /// Removes `ids` from their shards and retrains only those shards.
    pub fn unlearn(
        &mut self,
        ids: &[u64],
        train: &EmbeddingDataset,
        threads: usize,
    ) -> Result<FixSisaReport> {
        let s = self.num_shards();
        let mut touched = BTreeSet::new();
        for &id in ids {
            let sh = shard_of(id, self.seed, s);
            if self.shards[sh].binary_search(&id).is_err() {
                return Err(LegoError::UnknownId(id));
            }
            touched.insert(sh);
        }
        let forget: BTreeSet<u64> = ids.iter().copied().collect();
        if forget.len() != ids.len() {
            return Err(LegoError::Config("duplicate id in unlearn request".into()));
        }
        for &sh in &touched {
            self.shards[sh].retain(|id| !forget.contains(id));
        }
        let which: Vec<usize> = touched.into_iter().collect();
        let models = self.train_shards(train, &which, threads)?;
        for (&sh, m) in which.iter().zip(models) {
            self.models[sh] = m;
        }
        let kept: BTreeSet<u64> = self.shards.iter().flatten().copied().collect();
        self.data_digest = restricted(train, &kept)?.digest();
        Ok(FixSisaReport {
            retrained_samples: which.iter().map(|&sh| self.shards[sh].len()).sum(),
            retrained_shards: which,
        })
    }

    pub fn infer(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        let classes = self.models[0].classes();
        let mut out = vec![0.0f64; classes];
        for m in &self.models {
            for (o, v) in out.iter_mut().zip(m.predict(encoding)?) {
                *o += v;
            }
        }
        let s = self.models.len() as f64;
        out.iter_mut().for_each(|o| *o /= s);
        Ok(out)
    }

    pub fn classify(&self, encoding: &[f32]) -> Result<usize> {
        Ok(argmax(&self.infer(encoding)?))
    }

    pub fn trained_ids(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self.shards.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// True iff every shard model's provenance matches its shard list.
    pub fn provenance_consistent(&self) -> bool {
        self.shards
            .iter()
            .zip(&self.models)
            .all(|(ids, m)| m.trained_on_hash == ids_digest(ids))
    }
}

fn known_subset(trained: &[u64], ids: &[u64]) -> Result<BTreeSet<u64>> {
    let mut out = BTreeSet::new();
    for &id in ids {
        if trained.binary_search(&id).is_err() {
            return Err(LegoError::UnknownId(id));
        }
        if !out.insert(id) {
            return Err(LegoError::Config(format!("id {id} repeated in request")));
        }
    }
    Ok(out)
}

fn restricted(train: &EmbeddingDataset, keep: &BTreeSet<u64>) -> Result<EmbeddingDataset> {
    let ds = train.restricted_to(keep);
    if ds.len() != keep.len() {
        return Err(LegoError::Validation(
            "training data is missing retained ids".into(),
        ));
    }
    Ok(ds)
}
