// Run every system through one deletion scenario.
//
// ```bash
// cargo run --release --example scenario
// ```

use std::error::Error;

use legonet::adapter::TrainerConfig;
use legonet::bench::{run_scenario, write_csv, Scenario, Task};
use legonet::data::{split, synth_generate, SynthConfig};
use legonet::lego_model::LegoConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let data = synth_generate(&SynthConfig {
        num_classes: 4,
        dim: 8,
        samples_per_class: 100,
        cluster_separation: 3.0,
        noise_std: 1.0,
        seed: 2,
    })?;
    let (train, test) = split(&data, 0.2, 2)?;
    let mut lego = LegoConfig::new(20, 3, 2);
    lego.trainer = TrainerConfig {
        epochs: 8,
        ..TrainerConfig::default()
    };

    let scenario = Scenario::new("unclass".parse::<Task>()?, lego, 4, 2);
    let rows = run_scenario(&scenario, &train, &test)?;
    write_csv(&rows, std::io::stdout().lock())?;

    let scenario = Scenario::new(Task::Random(5), lego, 4, 2);
    for row in run_scenario(&scenario, &train, &test)? {
        println!("{:<16} {:>8.3} ms  {:>6} samples retrained", row.system, row.unlearn_ms, row.retrained_samples);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
