//! LegoNet: fixed keys, per-adapter sample records, independently trained
//! adapters, and k-of-n ensemble inference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapter::{softmax_in_place, train_adapter, AdapterModel, TrainerConfig};
use crate::data::{digest_samples, EmbeddingDataset, Sample};
use crate::digest::Digest;
use crate::error::{check_dim, LegoError, Result};
use crate::keyspace::{activate, init_keys, KeyInitConfig, KeySet};
use crate::parallel::map_indexed;
use crate::rng::mix;

/// How the k activated adapters' outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    /// Mean of the softmax distributions.
    #[default]
    Prob,
    /// Softmax of the mean logits.
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegoConfig {
    pub k: usize,
    pub key_init: KeyInitConfig,
    pub trainer: TrainerConfig,
    pub global_seed: u64,
    #[serde(default)]
    pub ensemble: EnsembleMode,
}

impl LegoConfig {
    /// Defaults for everything but `n`, `k` and the seed; the key seed is
    /// derived from the global seed.
    pub fn new(n: usize, k: usize, seed: u64) -> Self {
        LegoConfig {
            k,
            key_init: KeyInitConfig::new(n, mix(seed, u64::MAX)),
            trainer: TrainerConfig::default(),
            global_seed: seed,
            ensemble: EnsembleMode::Prob,
        }
    }

    pub fn n(&self) -> usize {
        self.key_init.n
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n() {
            return Err(LegoError::Config(format!(
                "k = {} must lie in [1, n = {}]",
                self.k,
                self.n()
            )));
        }
        self.trainer.validate()
    }

    /// Training seed of adapter `j`; independent of data and history.
    pub fn adapter_seed(&self, j: usize) -> u64 {
        mix(self.global_seed, j as u64)
    }
}

/// Which training ids activated which adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecords {
    lists: Vec<Vec<u64>>,
    reverse: BTreeMap<u64, Vec<usize>>,
}

impl SampleRecords {
    /// Rebuilds the reverse index from forward lists, checking that every id
    /// appears in exactly `k` lists and that lists are strictly ascending.
    pub fn from_lists(lists: Vec<Vec<u64>>, k: usize) -> Result<Self> {
        let mut reverse: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (j, list) in lists.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LegoError::Validation(format!(
                    "record list {j} is not strictly ascending"
                )));
            }
            for &id in list {
                reverse.entry(id).or_default().push(j);
            }
        }
        if let Some((id, adapters)) = reverse.iter().find(|(_, a)| a.len() != k) {
            return Err(LegoError::Validation(format!(
                "id {id} appears in {} record lists, expected {k}",
                adapters.len()
            )));
        }
        Ok(SampleRecords { lists, reverse })
    }

    pub fn num_adapters(&self) -> usize {
        self.lists.len()
    }

    pub fn list(&self, j: usize) -> &[u64] {
        &self.lists[j]
    }

    pub fn lists(&self) -> &[Vec<u64>] {
        &self.lists
    }

    /// Adapters that were trained on `id`, ascending.
    pub fn adapters_of(&self, id: u64) -> Option<&[usize]> {
        self.reverse.get(&id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.reverse.contains_key(&id)
    }

    pub fn retained_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.reverse.keys().copied()
    }

    pub fn num_retained(&self) -> usize {
        self.reverse.len()
    }

    pub fn total_len(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Removes `id` from every list holding it; returns those adapters.
    pub(crate) fn remove(&mut self, id: u64) -> Result<Vec<usize>> {
        let adapters = self.reverse.remove(&id).ok_or(LegoError::UnknownId(id))?;
        for &j in &adapters {
            let pos = self.lists[j]
                .binary_search(&id)
                .map_err(|_| LegoError::Internal(format!("reverse index lists {id} under {j}")))?;
            self.lists[j].remove(pos);
        }
        Ok(adapters)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegoNetState {
    pub config: LegoConfig,
    pub keys: KeySet,
    pub adapters: Vec<AdapterModel>,
    pub records: SampleRecords,
    /// Digest of the retained training samples.
    pub data_digest: Digest,
    pub(crate) classes: usize,
}

impl LegoNetState {
    pub fn from_parts(
        config: LegoConfig,
        keys: KeySet,
        adapters: Vec<AdapterModel>,
        records: SampleRecords,
        data_digest: Digest,
        classes: usize,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.n();
        if keys.len() != n || adapters.len() != n || records.num_adapters() != n {
            return Err(LegoError::Validation(format!(
                "expected {n} keys, adapters and record lists"
            )));
        }
        for a in &adapters {
            check_dim(keys.dim(), a.dim())?;
            check_dim(classes, a.classes())?;
        }
        Ok(LegoNetState {
            config,
            keys,
            adapters,
            records,
            data_digest,
            classes,
        })
    }

    pub fn n(&self) -> usize {
        self.config.n()
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn dim(&self) -> usize {
        self.keys.dim()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Stored record list of adapter `j`.
    pub fn records_of(&self, j: usize) -> Result<&[u64]> {
        if j >= self.n() {
            return Err(LegoError::Index {
                index: j,
                len: self.n(),
            });
        }
        Ok(self.records.list(j))
    }

    /// Ensemble distribution of the k nearest adapters.
    pub fn infer(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        let act = activate(encoding, &self.keys, self.config.k)?;
        let k = act.adapter_ids.len() as f64;
        let mut out = vec![0.0f64; self.classes];
        match self.config.ensemble {
            EnsembleMode::Prob => {
                for &j in &act.adapter_ids {
                    let p = self.adapters[j].predict(encoding)?;
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|o| *o /= k);
            }
            EnsembleMode::Logit => {
                for &j in &act.adapter_ids {
                    let z = self.adapters[j].logits(encoding)?;
                    for (o, v) in out.iter_mut().zip(z) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|o| *o /= k);
                softmax_in_place(&mut out);
            }
        }
        Ok(out)
    }

    /// Argmax of [`infer`](Self::infer), lowest class on ties.
    pub fn classify(&self, encoding: &[f32]) -> Result<usize> {
        Ok(argmax(&self.infer(encoding)?))
    }

    /// Trainable parameters of one adapter.
    pub fn adapter_params(&self) -> usize {
        self.adapters.first().map_or(0, AdapterModel::num_params)
    }
}

/// First index of the maximum.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Initializes keys from `train`, then trains all adapters.
pub fn fit(train: &EmbeddingDataset, config: &LegoConfig) -> Result<LegoNetState> {
    fit_threaded(train, config, 1)
}

pub fn fit_threaded(
    train: &EmbeddingDataset,
    config: &LegoConfig,
    threads: usize,
) -> Result<LegoNetState> {
    config.validate()?;
    let keys = init_keys(train, &config.key_init)?;
    fit_with_keys(train, config, keys, threads)
}

/// Builds records and trains every adapter against an existing key set.
///
/// Keys are part of the fixed architecture, so this is also the from-scratch
/// reference that unlearning must reproduce: `fit_with_keys(D \ S, keys)`.
pub fn fit_with_keys(
    train: &EmbeddingDataset,
    config: &LegoConfig,
    keys: KeySet,
    threads: usize,
) -> Result<LegoNetState> {
    config.validate()?;
    if keys.len() != config.n() {
        return Err(LegoError::Config(format!(
            "key set has {} keys but n = {}",
            keys.len(),
            config.n()
        )));
    }
    check_dim(keys.dim(), train.dim())?;
    let samples = train.samples();
    let activations = map_indexed(threads, samples.len(), |i| {
        activate(&samples[i].encoding, &keys, config.k).map(|a| a.adapter_ids)
    });
    let mut lists = vec![Vec::new(); config.n()];
    for (s, act) in samples.iter().zip(activations) {
        for j in act? {
            lists[j].push(s.id);
        }
    }
    let records = SampleRecords::from_lists(lists, config.k)?;
    let adapters = train_adapters(train, config, &records, &(0..config.n()).collect::<Vec<_>>(), threads)?;
    LegoNetState::from_parts(
        *config,
        keys,
        adapters,
        records,
        train.digest(),
        train.num_classes(),
    )
}

/// Record samples of adapter `j`, resolved against the dataset.
pub(crate) fn record_samples<'a>(
    train: &'a EmbeddingDataset,
    ids: &[u64],
) -> Result<Vec<&'a Sample>> {
    ids.iter()
        .map(|&id| {
            train.get(id).ok_or_else(|| {
                LegoError::Validation(format!("record id {id} missing from training data"))
            })
        })
        .collect()
}

pub(crate) fn train_adapters(
    train: &EmbeddingDataset,
    config: &LegoConfig,
    records: &SampleRecords,
    which: &[usize],
    threads: usize,
) -> Result<Vec<AdapterModel>> {
    map_indexed(threads, which.len(), |i| {
        let j = which[i];
        let samples = record_samples(train, records.list(j))?;
        train_adapter(
            &samples,
            train.num_classes(),
            train.dim(),
            &config.trainer,
            config.adapter_seed(j),
        )
    })
    .into_iter()
    .collect()
}

/// Digest of the samples whose ids are still retained.
pub(crate) fn retained_digest(train: &EmbeddingDataset, records: &SampleRecords) -> Result<Digest> {
    let ids: Vec<u64> = records.retained_ids().collect();
    let samples = record_samples(train, &ids)?;
    Ok(digest_samples(
        train.dim(),
        train.num_classes(),
        samples.into_iter(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::LinearParams;
    use crate::data::{synth_generate, SynthConfig};
    use crate::digest::ids_digest;
    use crate::keyspace::KeyInitConfig;

    fn fixture(per_class: usize, seed: u64) -> EmbeddingDataset {
        synth_generate(&SynthConfig {
            num_classes: 3,
            dim: 4,
            samples_per_class: per_class,
            cluster_separation: 3.0,
            noise_std: 1.0,
            seed,
        })
        .unwrap()
    }

    fn small_trainer() -> TrainerConfig {
        TrainerConfig {
            epochs: 5,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn single_adapter_is_single_head() {
        let ds = fixture(20, 1);
        let mut cfg = LegoConfig::new(1, 1, 5);
        cfg.trainer = small_trainer();
        let st = fit(&ds, &cfg).unwrap();
        let refs: Vec<&Sample> = ds.samples().iter().collect();
        let head = train_adapter(&refs, 3, 4, &cfg.trainer, cfg.adapter_seed(0)).unwrap();
        assert_eq!(st.adapters[0], head);
        let e = &ds.samples()[3].encoding;
        assert_eq!(st.infer(e).unwrap(), head.predict(e).unwrap());
    }

    #[test]
    fn exhaustive_activation_records_everything() {
        let ds = fixture(10, 2);
        let mut cfg = LegoConfig::new(4, 4, 5);
        cfg.trainer = small_trainer();
        let st = fit(&ds, &cfg).unwrap();
        for j in 0..4 {
            assert_eq!(st.records_of(j).unwrap(), ds.ids().as_slice());
        }
        assert!(matches!(st.records_of(4), Err(LegoError::Index { .. })));
    }

    #[test]
    fn counting_identity() {
        let ds = fixture(34, 3); // 102 samples
        let ds = ds.without(&[100u64, 101].into_iter().collect());
        let mut cfg = LegoConfig::new(10, 2, 6);
        cfg.trainer = small_trainer();
        let st = fit(&ds, &cfg).unwrap();
        assert_eq!(st.records.total_len(), 200);
        for id in ds.ids() {
            assert_eq!(st.records.adapters_of(id).unwrap().len(), 2);
        }
    }

    #[test]
    fn records_match_recomputed_activations() {
        let ds = fixture(30, 4);
        let mut cfg = LegoConfig::new(12, 3, 7);
        cfg.trainer = small_trainer();
        let st = fit(&ds, &cfg).unwrap();
        for s in ds.samples() {
            let mut act = activate(&s.encoding, &st.keys, 3).unwrap().adapter_ids;
            act.sort_unstable();
            assert_eq!(st.records.adapters_of(s.id).unwrap(), act.as_slice());
        }
        for (j, a) in st.adapters.iter().enumerate() {
            assert_eq!(a.trained_on_hash, ids_digest(st.records.list(j)));
        }
    }

    #[test]
    fn remote_key_gets_empty_record_and_zero_model() {
        let ds = fixture(10, 5);
        let mut cfg = LegoConfig::new(2, 1, 1);
        cfg.trainer = small_trainer();
        let keys = KeySet::from_parts(
            vec![vec![0.0; 4], vec![1e6; 4]],
            0,
            vec![0.0; 4],
        )
        .unwrap();
        let st = fit_with_keys(&ds, &cfg, keys, 1).unwrap();
        assert!(st.records_of(1).unwrap().is_empty());
        assert_eq!(
            st.adapters[1],
            AdapterModel::zero(3, 4, false, cfg.adapter_seed(1))
        );
    }

    #[test]
    fn identical_adapters_give_that_prediction_and_two_term_mean() {
        let classes = 2;
        let dim = 2;
        let w = LinearParams {
            classes,
            dim,
            weights: vec![50.0, 0.0, -50.0, 0.0],
            bias: None,
        };
        let a = AdapterModel::from_params(&w, 0, ids_digest(&[]));
        let flipped = LinearParams {
            weights: vec![-50.0, 0.0, 50.0, 0.0],
            ..w.clone()
        };
        let b = AdapterModel::from_params(&flipped, 0, ids_digest(&[]));
        let keys = KeySet::from_parts(vec![vec![0.0, 0.0], vec![0.0, 1.0]], 0, vec![0.0; 2])
            .unwrap();
        let config = LegoConfig {
            k: 2,
            key_init: KeyInitConfig {
                n: 2,
                perturb_scale: 0.0,
                seed: 0,
            },
            trainer: TrainerConfig::default(),
            global_seed: 0,
            ensemble: EnsembleMode::Prob,
        };
        let records = SampleRecords::from_lists(vec![vec![], vec![]], 2).unwrap();
        let same = LegoNetState::from_parts(
            config,
            keys.clone(),
            vec![a.clone(), a.clone()],
            records.clone(),
            ids_digest(&[]),
            classes,
        )
        .unwrap();
        let e = [1.0f32, 0.0];
        assert_eq!(same.infer(&e).unwrap(), a.predict(&e).unwrap());

        let mixed =
            LegoNetState::from_parts(config, keys, vec![a, b], records, ids_digest(&[]), classes)
                .unwrap();
        let p = mixed.infer(&e).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12, "{p:?}");
        assert_eq!(mixed.classify(&e).unwrap(), 0);
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn logit_ensemble_is_a_distribution() {
        let ds = fixture(20, 6);
        let mut cfg = LegoConfig::new(6, 3, 2);
        cfg.trainer = small_trainer();
        cfg.ensemble = EnsembleMode::Logit;
        let st = fit(&ds, &cfg).unwrap();
        let p = st.infer(&ds.samples()[0].encoding).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let ds = fixture(40, 7);
        let mut cfg = LegoConfig::new(8, 2, 3);
        cfg.trainer = small_trainer();
        let a = fit_threaded(&ds, &cfg, 1).unwrap();
        let b = fit_threaded(&ds, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }
}
