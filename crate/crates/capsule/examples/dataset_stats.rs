//! Ingest a dataset and emit class-distribution statistics and plots.
//!
//! Generates a skewed synthetic dataset, ingests it into a manifest,
//! prints per-class counts with the imbalance ratio, and writes the
//! distribution figures with and without the Normal class.
//!
//! Run with: cargo run --release -p capsule --example dataset_stats

use std::collections::BTreeMap;
use std::path::PathBuf;

use capsule::catalog::{compute_stats, ingest, ClassCatalog, Origin, Split};
use capsule::plot::emit_distribution_plot;
use capsule::synthetic::generate_synthetic;

fn main() -> capsule::Result<()> {
    let out = PathBuf::from("target/example-out/dataset_stats");
    let data = out.join("data");

    let catalog = ClassCatalog::new(
        vec![
            "Normal".into(),
            "Angioectasia".into(),
            "Bleeding".into(),
            "Erosion".into(),
            "Polyp".into(),
            "Worms".into(),
        ],
        "Normal",
    )?;
    let counts: BTreeMap<String, usize> = [
        ("Normal".to_string(), 300),
        ("Angioectasia".to_string(), 60),
        ("Bleeding".to_string(), 45),
        ("Erosion".to_string(), 30),
        ("Polyp".to_string(), 18),
        ("Worms".to_string(), 6),
    ]
    .into();

    println!("generating synthetic dataset under {}", data.display());
    generate_synthetic(&catalog, &counts, 32, 7, &data)?;

    let manifest = ingest(&data, &catalog)?;
    let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original))?;
    println!("{stats}");
    println!(
        "imbalance ratio excluding Normal: {:.2}",
        stats.imbalance_ratio_abnormal()
    );

    let with = out.join("distribution_with_normal.png");
    let without = out.join("distribution_without_normal.png");
    let n_with = emit_distribution_plot(&stats, true, &with)?;
    let n_without = emit_distribution_plot(&stats, false, &without)?;
    println!("wrote {} ({n_with} bars)", with.display());
    println!("wrote {} ({n_without} bars)", without.display());
    Ok(())
}
