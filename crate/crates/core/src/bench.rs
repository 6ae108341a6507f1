//! Evaluation protocol: accuracies on retain/unlearn/test splits, unlearning
//! wall time, hyperparameter sweeps and the closed-form cost model.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterModel, TrainerConfig};
use crate::baselines::{FixSisaModel, SingleHeadModel, StepConfig};
use crate::data::EmbeddingDataset;
use crate::error::{LegoError, Result};
use crate::lego_model::{argmax, fit_threaded, LegoConfig, LegoNetState};
use crate::rng::{self, mix};
use crate::unlearner::{unlearn_threaded, UnlearnRequest};

pub const CSV_HEADER: &str = "system,task,n,k,s,seed,acc_retain,acc_unlearn,acc_test,unlearn_ms,retrained_params,retrained_samples";

/// Anything that maps an encoding to a class distribution.
pub trait Classifier {
    fn predict_proba(&self, encoding: &[f32]) -> Result<Vec<f64>>;

    fn classify(&self, encoding: &[f32]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(encoding)?))
    }
}

impl Classifier for LegoNetState {
    fn predict_proba(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        self.infer(encoding)
    }
}

impl Classifier for SingleHeadModel {
    fn predict_proba(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        self.infer(encoding)
    }
}

impl Classifier for FixSisaModel {
    fn predict_proba(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        self.infer(encoding)
    }
}

impl Classifier for AdapterModel {
    fn predict_proba(&self, encoding: &[f32]) -> Result<Vec<f64>> {
        self.predict(encoding)
    }
}

/// Percentage of samples whose predicted class equals the label.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, dataset: &EmbeddingDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(LegoError::EmptySet);
    }
    let mut hits = 0usize;
    for s in dataset.samples() {
        if model.classify(&s.encoding)? == s.label as usize {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Delete `M` random training ids, one request each.
    Random(usize),
    /// Delete every sample of one random class in a single request.
    UnClass,
}

impl Task {
    pub fn name(&self) -> String {
        match self {
            Task::Random(m) => format!("Random{m}"),
            Task::UnClass => "UnClass".into(),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = LegoError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "unclass" {
            return Ok(Task::UnClass);
        }
        lower
            .strip_prefix("random")
            .map(|m| m.trim_start_matches(':'))
            .and_then(|m| m.parse::<usize>().ok())
            .filter(|m| *m >= 1)
            .map(Task::Random)
            .ok_or_else(|| LegoError::Config(format!("unknown task {s:?} (use randomM or unclass)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemId {
    Legonet,
    Retrain,
    Tune,
    Ngrad,
    Fixsisa,
}

impl SystemId {
    pub const ALL: [SystemId; 5] = [
        SystemId::Legonet,
        SystemId::Retrain,
        SystemId::Tune,
        SystemId::Ngrad,
        SystemId::Fixsisa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SystemId::Legonet => "legonet",
            SystemId::Retrain => "retrain",
            SystemId::Tune => "tune",
            SystemId::Ngrad => "ngrad",
            SystemId::Fixsisa => "fixsisa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub task: Task,
    pub lego: LegoConfig,
    /// Shard count of the FixSISA baseline.
    pub shards: usize,
    pub tune: StepConfig,
    pub ngrad: StepConfig,
    pub repetitions: usize,
    pub seed: u64,
    pub systems: Vec<SystemId>,
    pub threads: usize,
}

impl Scenario {
    pub fn new(task: Task, lego: LegoConfig, shards: usize, seed: u64) -> Self {
        Scenario {
            task,
            lego,
            shards,
            tune: StepConfig::TUNE_DEFAULT,
            ngrad: StepConfig::NGRAD_DEFAULT,
            repetitions: 1,
            seed,
            systems: SystemId::ALL.to_vec(),
            threads: 1,
        }
    }

    fn trainer(&self) -> &TrainerConfig {
        &self.lego.trainer
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub system: String,
    pub task: String,
    pub n: usize,
    pub k: usize,
    pub s: usize,
    pub seed: u64,
    pub acc_retain: f64,
    pub acc_unlearn: f64,
    pub acc_test: f64,
    pub unlearn_ms: f64,
    pub retrained_params: u64,
    pub retrained_samples: u64,
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| LegoError::Internal(format!("csv write: {e}")))?;
    }
    w.flush()
        .map_err(|e| LegoError::io("<csv output>", e))?;
    Ok(())
}

/// Ids removed by the scenario, in request order.
pub fn deletion_set(train: &EmbeddingDataset, task: Task, seed: u64) -> Result<Vec<u64>> {
    let mut r = rng::seeded(mix(seed, 0xDE1E7E));
    match task {
        Task::Random(m) => {
            if m == 0 || m >= train.len() {
                return Err(LegoError::Config(format!(
                    "cannot delete {m} of {} samples",
                    train.len()
                )));
            }
            let ids = train.ids();
            Ok(rng::sample_without_replacement(&mut r, ids.len(), m)
                .into_iter()
                .map(|i| ids[i])
                .collect())
        }
        Task::UnClass => {
            let c = rng::below(&mut r, train.num_classes()) as u32;
            let ids = train.class_ids(c);
            if ids.is_empty() || ids.len() == train.len() {
                return Err(LegoError::Config(format!(
                    "class {c} cannot be unlearned from this dataset"
                )));
            }
            Ok(ids)
        }
    }
}

/// Deletion requests: one per id for `Random`, one for the whole class.
fn requests(task: Task, ids: &[u64]) -> Vec<Vec<u64>> {
    match task {
        Task::Random(_) => ids.iter().map(|id| vec![*id]).collect(),
        Task::UnClass => vec![ids.to_vec()],
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

struct Outcome<M> {
    model: M,
    ms_per_request: f64,
    params: u64,
    samples: u64,
}

/// Runs the deletion phase `repetitions + 1` times from `origin`, discarding
/// the first (warm-up) run, and reports the median wall time over every
/// individual request of the kept runs. Every run is deterministic, so the
/// model and counters of the last run stand for all of them.
fn timed<M: Clone>(
    origin: &M,
    reqs: &[Vec<u64>],
    repetitions: usize,
    mut step: impl FnMut(&mut M, &[u64]) -> Result<(u64, u64)>,
) -> Result<Outcome<M>> {
    let mut times = Vec::new();
    let mut last = None;
    for rep in 0..=repetitions.max(1) {
        let mut model = origin.clone();
        let (mut params, mut samples) = (0u64, 0u64);
        for req in reqs {
            let t0 = Instant::now();
            let (p, s) = step(&mut model, req)?;
            if rep > 0 {
                times.push(t0.elapsed().as_secs_f64() * 1e3);
            }
            params += p;
            samples += s;
        }
        last = Some((model, params, samples));
    }
    let (model, params, samples) = last.expect("at least one run");
    Ok(Outcome {
        model,
        ms_per_request: median(times),
        params,
        samples,
    })
}

struct Splits {
    retain: EmbeddingDataset,
    forget: EmbeddingDataset,
}

#[allow(clippy::too_many_arguments)]
fn row<M: Classifier>(
    system: String,
    scenario: &Scenario,
    nks: (usize, usize, usize),
    model: &M,
    splits: &Splits,
    test: &EmbeddingDataset,
    ms: f64,
    params: u64,
    samples: u64,
) -> Result<MetricsRow> {
    Ok(MetricsRow {
        system,
        task: scenario.task.name(),
        n: nks.0,
        k: nks.1,
        s: nks.2,
        seed: scenario.seed,
        acc_retain: evaluate(model, &splits.retain)?,
        acc_unlearn: evaluate(model, &splits.forget)?,
        acc_test: evaluate(model, test)?,
        unlearn_ms: ms,
        retrained_params: params,
        retrained_samples: samples,
    })
}

/// Trains each configured system on `train`, records its pre-deletion
/// ("@origin") metrics, performs the scenario's deletions and records the
/// post-deletion metrics. Only `unlearn_ms` varies between runs.
pub fn run_scenario(
    scenario: &Scenario,
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
) -> Result<Vec<MetricsRow>> {
    scenario.lego.validate()?;
    let ids = deletion_set(train, scenario.task, scenario.seed)?;
    let forget_set: BTreeSet<u64> = ids.iter().copied().collect();
    let splits = Splits {
        retain: train.without(&forget_set),
        forget: train.restricted_to(&forget_set),
    };
    let reqs = requests(scenario.task, &ids);
    let threads = scenario.threads;
    let trainer = *scenario.trainer();
    let (n, k, s) = (scenario.lego.n(), scenario.lego.k, scenario.shards);
    let seed = scenario.seed;
    let head_params = (train.num_classes() * train.dim()
        + if trainer.use_bias { train.num_classes() } else { 0 }) as u64;
    let want = |sys: SystemId| scenario.systems.contains(&sys);
    let mut rows = Vec::new();

    if want(SystemId::Legonet) {
        let origin = fit_threaded(train, &scenario.lego, threads)?;
        rows.push(row("legonet@origin".into(), scenario, (n, k, 0), &origin, &splits, test, 0.0, 0, 0)?);
        let per_adapter = origin.adapter_params() as u64;
        let out = timed(&origin, &reqs, scenario.repetitions, |st, req| {
            let request = match scenario.task {
                Task::Random(_) => UnlearnRequest::sequential(req.to_vec()),
                Task::UnClass => UnlearnRequest::batched(req.to_vec()),
            };
            let rep = unlearn_threaded(st, &request, train, threads)?;
            Ok((rep.retrain_runs as u64 * per_adapter, rep.retrained_samples_total as u64))
        })?;
        rows.push(row("legonet".into(), scenario, (n, k, 0), &out.model, &splits, test, out.ms_per_request, out.params, out.samples)?);
    }

    let single = [SystemId::Retrain, SystemId::Tune, SystemId::Ngrad];
    if single.iter().any(|s| want(*s)) {
        let origin = SingleHeadModel::fit(train, &trainer, seed)?;
        rows.push(row("single@origin".into(), scenario, (0, 0, 0), &origin, &splits, test, 0.0, 0, 0)?);
        if want(SystemId::Retrain) {
            let out = timed(&origin, &reqs, scenario.repetitions, |m, req| {
                *m = m.retrain_without(req, train)?;
                Ok((head_params, m.trained_ids.len() as u64))
            })?;
            rows.push(row("retrain".into(), scenario, (0, 0, 0), &out.model, &splits, test, out.ms_per_request, out.params, out.samples)?);
        }
        if want(SystemId::Tune) {
            let out = timed(&origin, &reqs, scenario.repetitions, |m, req| {
                let gone: BTreeSet<u64> = req.iter().copied().collect();
                let keep: BTreeSet<u64> = m.trained_ids.iter().copied().filter(|id| !gone.contains(id)).collect();
                let retain = train.restricted_to(&keep);
                *m = m.tune(&retain, &scenario.tune, mix(seed, req[0]))?;
                Ok((head_params, retain.len() as u64))
            })?;
            rows.push(row("tune".into(), scenario, (0, 0, 0), &out.model, &splits, test, out.ms_per_request, out.params, out.samples)?);
        }
        if want(SystemId::Ngrad) {
            let out = timed(&origin, &reqs, scenario.repetitions, |m, req| {
                let forget = train.restricted_to(&req.iter().copied().collect());
                *m = m.ngrad(&forget, &scenario.ngrad, mix(seed, req[0]))?;
                Ok((head_params, forget.len() as u64))
            })?;
            rows.push(row("ngrad".into(), scenario, (0, 0, 0), &out.model, &splits, test, out.ms_per_request, out.params, out.samples)?);
        }
    }

    if want(SystemId::Fixsisa) {
        let origin = FixSisaModel::fit(train, s, &trainer, seed, threads)?;
        rows.push(row("fixsisa@origin".into(), scenario, (0, 0, s), &origin, &splits, test, 0.0, 0, 0)?);
        let out = timed(&origin, &reqs, scenario.repetitions, |m, req| {
            let rep = m.unlearn(req, train, threads)?;
            Ok((rep.retrained_shards.len() as u64 * head_params, rep.retrained_samples as u64))
        })?;
        rows.push(row("fixsisa".into(), scenario, (0, 0, s), &out.model, &splits, test, out.ms_per_request, out.params, out.samples)?);
    }
    Ok(rows)
}

/// Which quantity a sweep holds constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fixer {
    /// Constant k; grid values are n.
    FixK(usize),
    /// Constant n; grid values are k.
    FixN(usize),
    /// Constant n / k; grid values are k.
    FixRatio(usize),
}

impl Fixer {
    pub fn name(&self) -> String {
        match self {
            Fixer::FixK(k) => format!("fix-k={k}"),
            Fixer::FixN(n) => format!("fix-n={n}"),
            Fixer::FixRatio(r) => format!("fix-n/k={r}"),
        }
    }

    /// `(n, k)` grid points.
    pub fn points(&self, grid: &[usize]) -> Vec<(usize, usize)> {
        grid.iter()
            .map(|&v| match *self {
                Fixer::FixK(k) => (v, k),
                Fixer::FixN(n) => (n, v),
                Fixer::FixRatio(r) => (r * v, v),
            })
            .collect()
    }
}

/// One LegoNet row per grid point: fit with `base` at `(n, k)`, delete
/// `deletions` random ids one at a time, and record accuracies (retain and
/// test measured before deletion, unlearn after), median time per deletion,
/// and retraining counts.
pub fn sweep(
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    base: &LegoConfig,
    fixer: Fixer,
    grid: &[usize],
    deletions: usize,
    threads: usize,
) -> Result<Vec<MetricsRow>> {
    if grid.is_empty() {
        return Err(LegoError::Config("empty sweep grid".into()));
    }
    let ids = deletion_set(train, Task::Random(deletions.max(1)), base.global_seed)?;
    let forget = train.restricted_to(&ids.iter().copied().collect());
    let mut rows = Vec::new();
    for (n, k) in fixer.points(grid) {
        let mut cfg = *base;
        cfg.key_init.n = n;
        cfg.k = k;
        let mut st = fit_threaded(train, &cfg, threads)?;
        let acc_retain = evaluate(&st, train)?;
        let acc_test = evaluate(&st, test)?;
        let (mut runs, mut samples) = (0u64, 0u64);
        let mut times = Vec::with_capacity(ids.len());
        for id in &ids {
            let t0 = Instant::now();
            let rep = unlearn_threaded(&mut st, &UnlearnRequest::sequential(vec![*id]), train, threads)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
            runs += rep.retrain_runs as u64;
            samples += rep.retrained_samples_total as u64;
        }
        let ms = median(times);
        rows.push(MetricsRow {
            system: "legonet".into(),
            task: format!("Sweep:{}", fixer.name()),
            n,
            k,
            s: 0,
            seed: base.global_seed,
            acc_retain,
            acc_unlearn: evaluate(&st, &forget)?,
            acc_test,
            unlearn_ms: ms,
            retrained_params: runs * st.adapter_params() as u64,
            retrained_samples: samples,
        });
    }
    Ok(rows)
}

/// Exact non-negative rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den > 0);
        let g = gcd(num, den);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostInputs {
    pub dim: u64,
    pub classes: u64,
    pub n: u64,
    pub k: u64,
    pub shards: u64,
    pub samples: u64,
    pub encoder_params: u64,
    pub encoder_flops: u64,
    pub use_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub inputs: CostInputs,
    pub conventions: String,
    pub adapter_params: u64,
    /// Parameters retrained by LegoNet for one deletion: `k` adapters.
    pub retrain_params_lego: u64,
    /// Parameters retrained by full SISA for one deletion: encoder + head.
    pub retrain_params_sisa: u64,
    /// `kN/n`
    pub expected_samples_lego: Ratio,
    /// `k^2 N / n`
    pub expected_retrain_samples_lego: Ratio,
    /// `N / s`
    pub expected_retrain_samples_sisa: Ratio,
    pub lego_retrains_fewer_samples: bool,
    pub activation_flops: u64,
    pub selection_comparisons: u64,
    pub adapter_eval_flops: u64,
    pub inference_flops_total: u64,
}

pub const FLOP_CONVENTIONS: &str = "multiply-add = 2 FLOPs; key distance = 3d FLOPs (difference, square, accumulate) per key; \
     selection counted separately as n comparisons; adapter evaluation = 2dC FLOPs (+C with bias); \
     encoder constants are user-supplied";

/// Closed-form cost comparison; all arithmetic is exact.
pub fn cost_report(inputs: CostInputs) -> Result<CostReport> {
    let CostInputs {
        dim: d,
        classes: c,
        n,
        k,
        shards: s,
        samples: big_n,
        encoder_params,
        encoder_flops,
        use_bias,
    } = inputs;
    if d == 0 || c == 0 || n == 0 || k == 0 || s == 0 || big_n == 0 {
        return Err(LegoError::Config("cost inputs d, C, n, k, s, N must be positive".into()));
    }
    if k > n {
        return Err(LegoError::Config(format!("k = {k} exceeds n = {n}")));
    }
    let overflow = || LegoError::Config("cost inputs overflow".into());
    let bias = if use_bias { c } else { 0 };
    let adapter_params = c.checked_mul(d).and_then(|v| v.checked_add(bias)).ok_or_else(overflow)?;
    let retrain_params_lego = k.checked_mul(adapter_params).ok_or_else(overflow)?;
    let retrain_params_sisa = encoder_params.checked_add(adapter_params).ok_or_else(overflow)?;
    let (k128, n128, big_n128) = (k as u128, n as u128, big_n as u128);
    let expected_samples_lego = Ratio::new(k128 * big_n128, n128);
    let expected_retrain_samples_lego = Ratio::new(k128 * k128 * big_n128, n128);
    let expected_retrain_samples_sisa = Ratio::new(big_n128, s as u128);
    let activation_flops = n.checked_mul(3 * d).ok_or_else(overflow)?;
    let adapter_eval_flops = k
        .checked_mul(2 * d * c + bias)
        .ok_or_else(overflow)?;
    let inference_flops_total = encoder_flops
        .checked_add(activation_flops)
        .and_then(|v| v.checked_add(n))
        .and_then(|v| v.checked_add(adapter_eval_flops))
        .ok_or_else(overflow)?;
    Ok(CostReport {
        inputs,
        conventions: FLOP_CONVENTIONS.into(),
        adapter_params,
        retrain_params_lego,
        retrain_params_sisa,
        expected_samples_lego,
        expected_retrain_samples_lego,
        expected_retrain_samples_sisa,
        lego_retrains_fewer_samples: expected_retrain_samples_lego < expected_retrain_samples_sisa,
        activation_flops,
        selection_comparisons: n,
        adapter_eval_flops,
        inference_flops_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, synth_generate, Sample, SynthConfig};
    use crate::lego_model::fit_with_keys;
    use proptest::prelude::*;

    fn inputs(d: u64, c: u64, n: u64, k: u64, s: u64, big_n: u64) -> CostInputs {
        CostInputs {
            dim: d,
            classes: c,
            n,
            k,
            shards: s,
            samples: big_n,
            encoder_params: 21_800_000,
            encoder_flops: 3_600_000_000,
            use_bias: false,
        }
    }

    #[test]
    fn lego_retrains_k_linear_heads() {
        let r = cost_report(inputs(512, 10, 100, 10, 10, 50_000)).unwrap();
        assert_eq!(r.adapter_params, 5_120);
        assert_eq!(r.retrain_params_lego, 51_200);
        let unit = cost_report(inputs(1, 1, 1, 1, 1, 1)).unwrap();
        assert_eq!(unit.adapter_params, 1);
    }

    #[test]
    fn sample_inequality_direction() {
        let r = cost_report(inputs(512, 10, 1000, 3, 10, 50_000)).unwrap();
        assert_eq!(r.expected_retrain_samples_lego, Ratio::new(450, 1));
        assert_eq!(r.expected_retrain_samples_sisa, Ratio::new(5_000, 1));
        assert!(r.lego_retrains_fewer_samples);
        assert_eq!(r.expected_samples_lego, Ratio::new(150, 1));
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(cost_report(inputs(0, 10, 1, 1, 1, 1)).is_err());
        assert!(cost_report(inputs(4, 10, 2, 3, 1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn cost_formulas_rederived(
            d in 1u64..2048, c in 1u64..1000, n in 1u64..5000, k_frac in 0.0f64..1.0,
            s in 1u64..100, big_n in 1u64..1_000_000, enc in 0u64..100_000_000, bias in any::<bool>()
        ) {
            let k = 1 + ((n - 1) as f64 * k_frac) as u64;
            let mut i = inputs(d, c, n, k, s, big_n);
            i.encoder_params = enc;
            i.use_bias = bias;
            let r = cost_report(i).unwrap();
            let head = c * d + if bias { c } else { 0 };
            prop_assert_eq!(r.adapter_params, head);
            prop_assert_eq!(r.retrain_params_lego, k * head);
            prop_assert_eq!(r.retrain_params_sisa, enc + head);
            // cross-multiplied comparisons avoid any division
            let e = r.expected_samples_lego;
            prop_assert_eq!(e.num * n as u128, e.den * (k as u128 * big_n as u128));
            let e2 = r.expected_retrain_samples_lego;
            prop_assert_eq!(e2.num * n as u128, e2.den * (k as u128 * k as u128 * big_n as u128));
            prop_assert_eq!(
                r.lego_retrains_fewer_samples,
                (k as u128 * k as u128 * big_n as u128) * (s as u128) < (big_n as u128) * (n as u128)
            );
            prop_assert_eq!(r.activation_flops, 3 * n * d);
            prop_assert_eq!(r.adapter_eval_flops, k * (2 * d * c + if bias { c } else { 0 }));
        }
    }

    struct Constant(usize, usize);

    impl Classifier for Constant {
        fn predict_proba(&self, _: &[f32]) -> Result<Vec<f64>> {
            let mut p = vec![0.0; self.1];
            p[self.0] = 1.0;
            Ok(p)
        }
    }

    fn labelled(labels: &[u32], classes: usize) -> EmbeddingDataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Sample {
                id: i as u64,
                label: l,
                encoding: vec![i as f32, 1.0],
            })
            .collect();
        EmbeddingDataset::new(samples, 2, classes, "t").unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let zeros = labelled(&[0, 0, 0], 2);
        assert_eq!(evaluate(&Constant(0, 2), &zeros).unwrap(), 100.0);

        // Uniform predictor ties every class; enumeration with the tie rule
        // predicts class 0 everywhere, so accuracy = share of class 0.
        let balanced = labelled(&[0, 1, 2, 3, 0, 1, 2, 3], 4);
        let zero = AdapterModel::zero(4, 2, false, 0);
        let expected = 100.0
            * balanced.samples().iter().filter(|s| s.label == 0).count() as f64
            / balanced.len() as f64;
        assert_eq!(evaluate(&zero, &balanced).unwrap(), expected);
        assert_eq!(expected, 25.0);

        let empty = labelled(&[], 2);
        assert!(matches!(evaluate(&zero, &empty), Err(LegoError::EmptySet)));
    }

    #[test]
    fn union_accuracy_is_size_weighted() {
        let ds = synth_generate(&SynthConfig {
            num_classes: 3,
            dim: 4,
            samples_per_class: 40,
            cluster_separation: 2.0,
            noise_std: 1.0,
            seed: 8,
        })
        .unwrap();
        let (a, b) = split(&ds, 0.3, 1).unwrap();
        let head = SingleHeadModel::fit(&a, &TrainerConfig { epochs: 3, ..Default::default() }, 1).unwrap();
        let whole = evaluate(&head, &ds).unwrap();
        let weighted = (evaluate(&head, &a).unwrap() * a.len() as f64
            + evaluate(&head, &b).unwrap() * b.len() as f64)
            / ds.len() as f64;
        assert!((whole - weighted).abs() < 1e-9);
    }

    fn small_scenario(task: Task) -> (Scenario, EmbeddingDataset, EmbeddingDataset) {
        let ds = synth_generate(&SynthConfig {
            num_classes: 3,
            dim: 4,
            samples_per_class: 60,
            cluster_separation: 3.0,
            noise_std: 1.0,
            seed: 5,
        })
        .unwrap();
        let (train, test) = split(&ds, 0.2, 5).unwrap();
        let mut lego = LegoConfig::new(10, 3, 11);
        lego.trainer.epochs = 4;
        let mut sc = Scenario::new(task, lego, 4, 11);
        sc.repetitions = 2;
        (sc, train, test)
    }

    fn strip_timing(rows: &[MetricsRow]) -> Vec<MetricsRow> {
        rows.iter()
            .cloned()
            .map(|mut r| {
                r.unlearn_ms = 0.0;
                r
            })
            .collect()
    }

    #[test]
    fn scenario_is_deterministic_except_timing() {
        let (sc, train, test) = small_scenario(Task::Random(1));
        let a = run_scenario(&sc, &train, &test).unwrap();
        let b = run_scenario(&sc, &train, &test).unwrap();
        assert_eq!(strip_timing(&a), strip_timing(&b));
        assert_eq!(a.len(), 8);
        let mut buf = Vec::new();
        write_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn lego_row_counts_match_unlearn_report() {
        let (sc, train, test) = small_scenario(Task::Random(3));
        let rows = run_scenario(&sc, &train, &test).unwrap();
        let lego = rows.iter().find(|r| r.system == "legonet").unwrap();
        let ids = deletion_set(&train, sc.task, sc.seed).unwrap();
        let mut st = crate::lego_model::fit(&train, &sc.lego).unwrap();
        let mut total = 0;
        for id in ids {
            total += crate::unlearner::unlearn(&mut st, &UnlearnRequest::sequential(vec![id]), &train)
                .unwrap()
                .retrained_samples_total;
        }
        assert_eq!(lego.retrained_samples, total as u64);
    }

    #[test]
    fn unclass_unlearn_accuracy_matches_scratch() {
        let (sc, train, test) = small_scenario(Task::UnClass);
        let rows = run_scenario(&sc, &train, &test).unwrap();
        let ids = deletion_set(&train, sc.task, sc.seed).unwrap();
        let gone: BTreeSet<u64> = ids.iter().copied().collect();
        let forget = train.restricted_to(&gone);
        let retained = train.without(&gone);

        let origin = crate::lego_model::fit(&train, &sc.lego).unwrap();
        let scratch = fit_with_keys(&retained, &sc.lego, origin.keys.clone(), 1).unwrap();
        let lego = rows.iter().find(|r| r.system == "legonet").unwrap();
        assert_eq!(lego.acc_unlearn, evaluate(&scratch, &forget).unwrap());

        let head = SingleHeadModel::fit(&retained, &sc.lego.trainer, sc.seed).unwrap();
        let retrain = rows.iter().find(|r| r.system == "retrain").unwrap();
        assert_eq!(retrain.acc_unlearn, evaluate(&head, &forget).unwrap());
        // A head that never saw the class cannot predict it.
        assert_eq!(retrain.acc_unlearn, 0.0);
    }

    #[test]
    fn task_parsing() {
        assert_eq!("random100".parse::<Task>().unwrap(), Task::Random(100));
        assert_eq!("Random:5".parse::<Task>().unwrap(), Task::Random(5));
        assert_eq!("unclass".parse::<Task>().unwrap(), Task::UnClass);
        assert!("random0".parse::<Task>().is_err());
        assert!("bogus".parse::<Task>().is_err());
    }

    #[test]
    fn sweep_fix_k_mean_record_size_scales_inverse_n() {
        let ds = synth_generate(&SynthConfig {
            num_classes: 3,
            dim: 4,
            samples_per_class: 100,
            cluster_separation: 3.0,
            noise_std: 1.0,
            seed: 6,
        })
        .unwrap();
        let (train, test) = split(&ds, 0.2, 1).unwrap();
        let mut base = LegoConfig::new(10, 2, 3);
        base.trainer.epochs = 3;
        let rows = sweep(&train, &test, &base, Fixer::FixK(2), &[10, 20, 40], 1, 1).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(Fixer::FixRatio(10).points(&[1, 2]), vec![(10, 1), (20, 2)]);
        for r in &rows {
            let mut cfg = base;
            cfg.key_init.n = r.n;
            let st = crate::lego_model::fit(&train, &cfg).unwrap();
            // mean record size = kN/n exactly
            assert_eq!(st.records.total_len(), r.k * train.len());
            assert_eq!(
                Ratio::new(st.records.total_len() as u128, r.n as u128),
                Ratio::new((r.k * train.len()) as u128, r.n as u128)
            );
        }
    }
}
