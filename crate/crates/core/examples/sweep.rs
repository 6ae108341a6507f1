// Sweep k at fixed n and print the metrics CSV.
//
// ```bash
// cargo run --release --example sweep
// ```

use std::error::Error;

use legonet::adapter::TrainerConfig;
use legonet::bench::{sweep, write_csv, Fixer};
use legonet::data::{split, synth_generate, SynthConfig};
use legonet::lego_model::LegoConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let data = synth_generate(&SynthConfig {
        num_classes: 5,
        dim: 8,
        samples_per_class: 80,
        cluster_separation: 2.5,
        noise_std: 1.0,
        seed: 21,
    })?;
    let (train, test) = split(&data, 0.25, 21)?;
    let mut base = LegoConfig::new(1, 1, 21);
    base.trainer = TrainerConfig {
        epochs: 10,
        ..TrainerConfig::default()
    };
    let rows = sweep(&train, &test, &base, Fixer::FixN(20), &[1, 2, 5], 3, 1)?;
    write_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
