//! Balance a skewed training set with tiered augmentation.
//!
//! Builds the three tiers, plans per-class copy multiplicities toward a
//! target count (scarce classes get the heavy tier), executes the plan to
//! disk, and shows the before/after counts plus the determinism of a rerun.
//!
//! Run with: cargo run --release -p capsule --example augmentation_balancing

use std::collections::BTreeMap;
use std::path::PathBuf;

use capsule::augment::{build_plan, build_tiers, execute_plan, TierParams};
use capsule::catalog::{compute_stats, ingest, ClassCatalog, Origin, Split};
use capsule::plot::emit_distribution_plot;
use capsule::synthetic::generate_synthetic;

fn main() -> capsule::Result<()> {
    let out = PathBuf::from("target/example-out/augmentation_balancing");
    let data = out.join("data");

    let catalog = ClassCatalog::new(
        vec!["Normal".into(), "Bleeding".into(), "Polyp".into(), "Worms".into()],
        "Normal",
    )?;
    let counts: BTreeMap<String, usize> = [
        ("Normal".to_string(), 240),
        ("Bleeding".to_string(), 50),
        ("Polyp".to_string(), 20),
        ("Worms".to_string(), 8),
    ]
    .into();
    generate_synthetic(&catalog, &counts, 32, 3, &data)?;
    let manifest = ingest(&data, &catalog)?;

    let pre = compute_stats(&manifest, Split::Train, Some(Origin::Original))?;
    println!("before augmentation:\n{pre}");

    let tiers = build_tiers(&TierParams::default())?;
    for tier in [&tiers.light, &tiers.medium, &tiers.heavy] {
        println!(
            "tier {:<6} -> {:?}",
            tier.name.to_string(),
            tier.kinds().iter().collect::<Vec<_>>()
        );
    }

    // Thresholds scaled to this toy set; the defaults target real datasets.
    let plan = build_plan(&pre, &catalog, 100, 25, (40, 120))?;
    print!("{}", plan.describe());

    let aug_dir = out.join("augmented");
    let augmented = execute_plan(&manifest, &plan, &tiers, 42, &aug_dir)?;
    let post = compute_stats(&augmented, Split::Train, None)?;
    println!("after augmentation:\n{post}");
    println!(
        "abnormal imbalance ratio: {:.2} -> {:.2}",
        pre.imbalance_ratio_abnormal(),
        post.imbalance_ratio_abnormal()
    );

    let plot = out.join("post_augmentation_distribution.png");
    emit_distribution_plot(&post, false, &plot)?;
    println!("wrote {}", plot.display());

    // Same seed, second directory: byte-identical outputs.
    let rerun_dir = out.join("augmented_rerun");
    let rerun = execute_plan(&manifest, &plan, &tiers, 42, &rerun_dir)?;
    let bytes = |m: &capsule::catalog::DatasetManifest| -> u64 {
        m.records()
            .iter()
            .filter(|r| r.origin == Origin::Augmented)
            .map(|r| std::fs::read(&r.image_path).map(|b| b.len() as u64).unwrap_or(0))
            .sum()
    };
    println!(
        "rerun determinism: {} bytes vs {} bytes of augmented images",
        bytes(&augmented),
        bytes(&rerun)
    );
    Ok(())
}
