// Fit a LegoNet on synthetic embeddings and classify a few held-out points.
//
// ```bash
// cargo run --example quickstart
// ```

use std::error::Error;

use legonet::bench::evaluate;
use legonet::data::{split, synth_generate, SynthConfig};
use legonet::lego_model::{fit, LegoConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let data = synth_generate(&SynthConfig {
        num_classes: 4,
        dim: 8,
        samples_per_class: 150,
        cluster_separation: 3.0,
        noise_std: 1.0,
        seed: 7,
    })?;
    let (train, test) = split(&data, 0.2, 7)?;

    let config = LegoConfig::new(20, 3, 1);
    let model = fit(&train, &config)?;
    println!(
        "{} adapters, {} active per query, {} params each",
        model.n(),
        model.k(),
        model.adapter_params()
    );
    println!("train accuracy {:.1}%", evaluate(&model, &train)?);
    println!("test accuracy  {:.1}%", evaluate(&model, &test)?);

    for s in test.samples().iter().take(3) {
        let p = model.infer(&s.encoding)?;
        println!("id {:>4} label {} -> {} {:?}", s.id, s.label, model.classify(&s.encoding)?, p);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
