// Build embedding datasets by hand, write them as LGEM and CSV, and split.
//
// ```bash
// cargo run --example dataset_io
// ```

use std::error::Error;

use legonet::data::{load_dataset, split, EmbeddingDataset, Sample};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let samples = (0..40u64)
        .map(|id| Sample {
            id: 1000 + id,
            label: (id % 2) as u32,
            encoding: vec![id as f32, (id % 2) as f32 * 5.0, -0.5],
        })
        .collect();
    let ds = EmbeddingDataset::new(samples, 3, 2, "hand-made")?;

    let lgem = dir.path().join("toy.lgem");
    let csv = dir.path().join("toy.csv");
    ds.save(&lgem)?;
    ds.save(&csv)?;
    let a = load_dataset(&lgem)?;
    let b = load_dataset(&csv)?;
    assert_eq!(a.digest(), b.digest());
    println!("{} samples round-tripped through LGEM and CSV", a.len());
    print!("{}", ds.to_csv_string().lines().take(3).collect::<Vec<_>>().join("\n"));
    println!();

    let (train, test) = split(&ds, 0.25, 1)?;
    println!("split: {} train, {} test", train.len(), test.len());

    let bad = EmbeddingDataset::new(
        vec![Sample { id: 1, label: 0, encoding: vec![f32::NAN, 0.0, 0.0] }],
        3,
        2,
        "bad",
    );
    println!("non-finite encoding rejected: {}", bad.unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
