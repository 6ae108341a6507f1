// Unlearn one sample and then a whole class, and check both results against
// a model fitted from scratch on the reduced data with the same keys.
//
// ```bash
// cargo run --example exact_unlearning
// ```

use std::collections::BTreeSet;
use std::error::Error;

use legonet::data::{synth_generate, SynthConfig};
use legonet::lego_model::{fit, fit_with_keys, LegoConfig};
use legonet::unlearner::{unlearn, verify_erasure, UnlearnRequest};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let train = synth_generate(&SynthConfig {
        num_classes: 3,
        dim: 8,
        samples_per_class: 100,
        cluster_separation: 3.0,
        noise_std: 1.0,
        seed: 11,
    })?;
    let config = LegoConfig::new(30, 3, 5);
    let mut model = fit(&train, &config)?;
    let keys = model.keys.clone();

    let report = unlearn(&mut model, &UnlearnRequest::sequential(vec![42]), &train)?;
    println!(
        "id 42: retrained adapters {:?} on {} samples",
        report.impacted_adapters, report.retrained_samples_total
    );

    let class = train.class_ids(2);
    let report = unlearn(&mut model, &UnlearnRequest::batched(class.clone()), &train)?;
    println!(
        "class 2 ({} ids): {} of {} adapters retrained",
        class.len(),
        report.retrained_adapters,
        model.n()
    );

    let mut gone: BTreeSet<u64> = class.iter().copied().collect();
    gone.insert(42);
    let scratch = fit_with_keys(&train.without(&gone), &config, keys, 1)?;
    assert_eq!(model, scratch);
    assert!(verify_erasure(&model, &gone.iter().copied().collect::<Vec<_>>()));
    println!("unlearned model is identical to the from-scratch fit");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
