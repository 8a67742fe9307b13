//! End-to-end curriculum training on a synthetic skewed dataset.
//!
//! Pipeline: generate data -> plan and execute augmentation -> build the
//! schedule -> staged training with head expansion between stages ->
//! per-stage checkpoints and the final weighted report.
//!
//! Run with: cargo run --release -p capsule --example train_curriculum

use std::collections::BTreeMap;
use std::path::PathBuf;

use capsule::augment::{build_plan, build_tiers, execute_plan, TierParams};
use capsule::catalog::{compute_stats, ingest, ClassCatalog, Origin, Split};
use capsule::curriculum::{build_schedule, RemainderMode};
use capsule::model::{Architecture, ModelSpec};
use capsule::trainer::{run_curriculum, TrainConfig};

fn main() -> capsule::Result<()> {
    let out = PathBuf::from("target/example-out/train_curriculum");
    let data = out.join("data");

    let catalog = ClassCatalog::new(
        vec!["Normal".into(), "Bleeding".into(), "Polyp".into(), "Worms".into()],
        "Normal",
    )?;
    let counts: BTreeMap<String, usize> = [
        ("Normal".to_string(), 120),
        ("Bleeding".to_string(), 30),
        ("Polyp".to_string(), 15),
        ("Worms".to_string(), 6),
    ]
    .into();
    generate(&catalog, &counts, &data)?;
    let manifest = ingest(&data, &catalog)?;

    let pre = compute_stats(&manifest, Split::Train, Some(Origin::Original))?;
    let tiers = build_tiers(&TierParams::default())?;
    let plan = build_plan(&pre, &catalog, 60, 25, (20, 60))?;
    let manifest = execute_plan(&manifest, &plan, &tiers, 11, &out.join("augmented"))?;
    println!(
        "train records after augmentation: {}",
        manifest.split_records(Split::Train).count()
    );

    let schedule = build_schedule(&pre, &catalog, RemainderMode::Aggregate)?;
    println!("{}", schedule.describe());

    let spec = ModelSpec::new(Architecture::TinyHybrid, catalog.len());
    let config = TrainConfig {
        epochs_per_stage: 2,
        batch_size: 32,
        seed: 11,
        ..TrainConfig::default()
    };
    let outcome = run_curriculum(&manifest, &schedule, &spec, &config, Some(&out))?;

    println!("per-epoch log:");
    for e in &outcome.log.entries {
        let f1 = e.val.map(|v| format!("{:.3}", v.f1)).unwrap_or_else(|| "-".into());
        println!(
            "  stage {} epoch {}: train loss {:.4}, val weighted F1 {}",
            e.stage, e.epoch, e.train_loss, f1
        );
    }
    if let Some(report) = &outcome.final_report {
        println!("\nfinal report:\n{}", report.to_markdown());
    }
    println!(
        "checkpoints under {} (one per stage), wall time {:.1}s",
        out.display(),
        outcome.log.wall_time_secs
    );
    Ok(())
}

fn generate(
    catalog: &ClassCatalog,
    counts: &BTreeMap<String, usize>,
    data: &std::path::Path,
) -> capsule::Result<()> {
    capsule::synthetic::generate_synthetic(catalog, counts, 32, 5, data)
}
