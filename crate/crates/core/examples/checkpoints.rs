// Save, reload and compare checkpoints.
//
// ```bash
// cargo run --example checkpoints
// ```

use std::error::Error;

use legonet::data::{synth_generate, SynthConfig};
use legonet::digest::hex;
use legonet::lego_model::{fit, LegoConfig};
use legonet::persist::{self, Checkpoint};
use legonet::unlearner::{unlearn, UnlearnRequest};
use legonet::LegoError;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let train = synth_generate(&SynthConfig {
        num_classes: 3,
        dim: 6,
        samples_per_class: 50,
        cluster_separation: 3.0,
        noise_std: 1.0,
        seed: 4,
    })?;
    let model = fit(&train, &LegoConfig::new(10, 2, 4))?;

    let a = dir.path().join("a.ckpt");
    let digest = persist::save(&Checkpoint::Lego(model.clone()), &a)?;
    println!("saved {} ({} bytes)", hex(&digest), std::fs::metadata(&a)?.len());

    let Checkpoint::Lego(reloaded) = persist::load(&a)? else {
        unreachable!("saved a LegoNet checkpoint");
    };
    assert_eq!(reloaded, model);

    let mut edited = model;
    unlearn(&mut edited, &UnlearnRequest::sequential(vec![0]), &train)?;
    let b = dir.path().join("b.ckpt");
    persist::save(&Checkpoint::Lego(edited), &b)?;
    let cmp = persist::states_equal(&a, &b)?;
    println!("equal: {}, first difference: {:?}", cmp.equal, cmp.first_difference);

    let mut bytes = std::fs::read(&a)?;
    bytes[20] ^= 1;
    match persist::decode(&bytes) {
        Err(LegoError::DigestMismatch { .. }) => println!("corrupted copy rejected"),
        other => panic!("expected a digest mismatch, got {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
