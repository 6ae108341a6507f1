// The comparison systems: single-head Re-Train, Tune and NGrad, and
// fixed-shard SISA.
//
// ```bash
// cargo run --example baselines
// ```

use std::collections::BTreeSet;
use std::error::Error;

use legonet::adapter::TrainerConfig;
use legonet::baselines::{FixSisaModel, SingleHeadModel, StepConfig};
use legonet::bench::evaluate;
use legonet::data::{synth_generate, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let train = synth_generate(&SynthConfig {
        num_classes: 3,
        dim: 8,
        samples_per_class: 100,
        cluster_separation: 3.0,
        noise_std: 1.0,
        seed: 3,
    })?;
    let trainer = TrainerConfig::default();
    let forget_ids = train.class_ids(0);
    let forget_set: BTreeSet<u64> = forget_ids.iter().copied().collect();
    let forget = train.restricted_to(&forget_set);
    let retain = train.without(&forget_set);

    let single = SingleHeadModel::fit(&train, &trainer, 9)?;
    println!("single head before: forget-class acc {:.1}%", evaluate(&single, &forget)?);

    let retrained = single.retrain_without(&forget_ids, &train)?;
    assert_eq!(retrained, SingleHeadModel::fit(&retain, &trainer, 9)?);
    println!("re-train:           forget-class acc {:.1}%", evaluate(&retrained, &forget)?);

    let tuned = single.tune(&retain, &StepConfig::TUNE_DEFAULT, 9)?;
    println!("tune:               forget-class acc {:.1}%", evaluate(&tuned, &forget)?);

    let ascended = single.ngrad(&forget, &StepConfig::NGRAD_DEFAULT, 9)?;
    println!(
        "ngrad:              forget-class acc {:.1}%, equals re-train: {}",
        evaluate(&ascended, &forget)?,
        ascended.model == retrained.model
    );

    let mut sisa = FixSisaModel::fit(&train, 5, &trainer, 9, 1)?;
    let report = sisa.unlearn(&forget_ids[..3], &train, 1)?;
    println!(
        "fixsisa(s=5): retrained shards {:?} on {} samples",
        report.retrained_shards, report.retrained_samples
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
