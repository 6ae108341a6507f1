//! Exact unlearning: drop ids from the sample records and retrain the
//! adapters that held them from their original seeds.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingDataset;
use crate::digest::ids_digest;
use crate::error::{LegoError, Result};
use crate::lego_model::{record_samples, retained_digest, LegoNetState};
use crate::adapter::train_adapter;
use crate::parallel::map_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlearnMode {
    /// One removal-and-retrain pass per id, in request order.
    #[default]
    Sequential,
    /// Remove every id first, then retrain each impacted adapter once.
    Batched,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlearnRequest {
    pub ids: Vec<u64>,
    pub mode: UnlearnMode,
}

impl UnlearnRequest {
    pub fn sequential(ids: Vec<u64>) -> Self {
        UnlearnRequest {
            ids,
            mode: UnlearnMode::Sequential,
        }
    }

    pub fn batched(ids: Vec<u64>) -> Self {
        UnlearnRequest {
            ids,
            mode: UnlearnMode::Batched,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterTiming {
    pub adapter: usize,
    pub samples: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub mode: UnlearnMode,
    pub removed_ids: Vec<u64>,
    /// Union of adapters touched by the request, ascending.
    pub impacted_adapters: Vec<usize>,
    pub retrained_adapters: usize,
    /// Retraining runs performed; exceeds `retrained_adapters` when a
    /// sequential request hits the same adapter more than once.
    pub retrain_runs: usize,
    /// Sum of record sizes over all retraining runs.
    pub retrained_samples_total: usize,
    pub adapter_timings: Vec<AdapterTiming>,
    pub total_seconds: f64,
}

/// Union of the recorded adapters of `ids`, ascending.
pub fn impacted_adapters(state: &LegoNetState, ids: &[u64]) -> Result<Vec<usize>> {
    let mut out = BTreeSet::new();
    for &id in ids {
        let adapters = state
            .records
            .adapters_of(id)
            .ok_or(LegoError::UnknownId(id))?;
        out.extend(adapters.iter().copied());
    }
    Ok(out.into_iter().collect())
}

fn validate_request(state: &LegoNetState, request: &UnlearnRequest) -> Result<()> {
    if request.ids.is_empty() {
        return Err(LegoError::Config("unlearn request has no ids".into()));
    }
    let mut seen = BTreeSet::new();
    for &id in &request.ids {
        if !seen.insert(id) {
            return Err(LegoError::Config(format!("id {id} repeated in request")));
        }
        if !state.records.contains(id) {
            return Err(LegoError::UnknownId(id));
        }
    }
    Ok(())
}

pub fn unlearn(
    state: &mut LegoNetState,
    request: &UnlearnRequest,
    train: &EmbeddingDataset,
) -> Result<UnlearnReport> {
    unlearn_threaded(state, request, train, 1)
}

/// Runs the request against `state` in place. `train` must contain every
/// retained id (it may also contain the ids being removed).
///
/// The request is validated in full before anything is modified.
pub fn unlearn_threaded(
    state: &mut LegoNetState,
    request: &UnlearnRequest,
    train: &EmbeddingDataset,
    threads: usize,
) -> Result<UnlearnReport> {
    validate_request(state, request)?;
    let start = Instant::now();
    let impacted = impacted_adapters(state, &request.ids)?;
    let mut timings = Vec::new();
    match request.mode {
        UnlearnMode::Sequential => {
            for &id in &request.ids {
                let touched = state.records.remove(id)?;
                timings.extend(retrain(state, train, &touched, threads)?);
            }
        }
        UnlearnMode::Batched => {
            for &id in &request.ids {
                state.records.remove(id)?;
            }
            timings.extend(retrain(state, train, &impacted, threads)?);
        }
    }
    state.data_digest = retained_digest(train, &state.records)?;
    Ok(UnlearnReport {
        mode: request.mode,
        removed_ids: request.ids.clone(),
        retrained_adapters: impacted.len(),
        impacted_adapters: impacted,
        retrain_runs: timings.len(),
        retrained_samples_total: timings.iter().map(|t| t.samples).sum(),
        adapter_timings: timings,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Retrains the listed adapters from fresh initialization on their current
/// records.
fn retrain(
    state: &mut LegoNetState,
    train: &EmbeddingDataset,
    which: &[usize],
    threads: usize,
) -> Result<Vec<AdapterTiming>> {
    let st: &LegoNetState = state;
    let results = map_indexed(threads, which.len(), |i| {
        let j = which[i];
        let t0 = Instant::now();
        let samples = record_samples(train, st.records.list(j))?;
        let model = train_adapter(
            &samples,
            st.classes(),
            st.dim(),
            &st.config.trainer,
            st.config.adapter_seed(j),
        )?;
        let timing = AdapterTiming {
            adapter: j,
            samples: samples.len(),
            seconds: t0.elapsed().as_secs_f64(),
        };
        Ok::<_, LegoError>((model, timing))
    });
    let mut timings = Vec::with_capacity(which.len());
    for (&j, r) in which.iter().zip(results) {
        let (model, timing) = r?;
        state.adapters[j] = model;
        timings.push(timing);
    }
    Ok(timings)
}

/// True iff none of `ids` is retained, recorded against any adapter, or
/// reflected in an adapter's training provenance.
pub fn verify_erasure(state: &LegoNetState, ids: &[u64]) -> bool {
    let probe: BTreeSet<u64> = ids.iter().copied().collect();
    if probe.iter().any(|id| state.records.contains(*id)) {
        return false;
    }
    state
        .records
        .lists()
        .iter()
        .zip(&state.adapters)
        .all(|(list, adapter)| {
            list.iter().all(|id| !probe.contains(id))
                && adapter.trained_on_hash == ids_digest(list)
        })
}
