// Closed-form retraining and inference costs.
//
// ```bash
// cargo run --example cost_model
// ```

use std::error::Error;

use legonet::bench::{cost_report, CostInputs};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let report = cost_report(CostInputs {
        dim: 512,
        classes: 10,
        n: 100,
        k: 10,
        shards: 10,
        samples: 50_000,
        encoder_params: 21_284_672,
        encoder_flops: 3_600_000_000,
        use_bias: false,
    })?;
    println!("parameters retrained per deletion: {}", report.retrain_params_lego);
    println!("versus a retrained SISA shard:     {}", report.retrain_params_sisa);

    let report = cost_report(CostInputs {
        n: 1000,
        k: 3,
        ..report.inputs
    })?;
    println!(
        "samples retrained: k^2 N/n = {} vs N/s = {}",
        report.expected_retrain_samples_lego.value(),
        report.expected_retrain_samples_sisa.value()
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
