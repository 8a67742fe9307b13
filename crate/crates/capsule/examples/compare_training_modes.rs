//! Curriculum vs direct training on the same augmented dataset with the
//! same epoch budget, rendered as a comparison table next to the stored
//! reference rows.
//!
//! Run with: cargo run --release -p capsule --example compare_training_modes

use std::collections::BTreeMap;
use std::path::PathBuf;

use capsule::augment::{build_plan, build_tiers, execute_plan, TierParams};
use capsule::catalog::{compute_stats, ingest, ClassCatalog, Origin, Split};
use capsule::curriculum::{build_schedule, RemainderMode};
use capsule::metrics::{reference_rows, render_comparison};
use capsule::model::{Architecture, ModelSpec};
use capsule::synthetic::generate_synthetic;
use capsule::trainer::{run_curriculum, run_direct, TrainConfig};

fn main() -> capsule::Result<()> {
    let out = PathBuf::from("target/example-out/compare_training_modes");
    let data = out.join("data");

    let catalog = ClassCatalog::new(
        vec!["Normal".into(), "Bleeding".into(), "Polyp".into(), "Worms".into()],
        "Normal",
    )?;
    let counts: BTreeMap<String, usize> = [
        ("Normal".to_string(), 120),
        ("Bleeding".to_string(), 24),
        ("Polyp".to_string(), 12),
        ("Worms".to_string(), 6),
    ]
    .into();
    generate_synthetic(&catalog, &counts, 32, 21, &data)?;
    let manifest = ingest(&data, &catalog)?;

    let pre = compute_stats(&manifest, Split::Train, Some(Origin::Original))?;
    let tiers = build_tiers(&TierParams::default())?;
    let plan = build_plan(&pre, &catalog, 60, 25, (20, 60))?;
    let manifest = execute_plan(&manifest, &plan, &tiers, 21, &out.join("augmented"))?;

    let schedule = build_schedule(&pre, &catalog, RemainderMode::Aggregate)?;
    let spec = ModelSpec::new(Architecture::TinyHybrid, catalog.len());
    let config = TrainConfig {
        epochs_per_stage: 2,
        batch_size: 32,
        seed: 21,
        ..TrainConfig::default()
    };

    println!(
        "curriculum: {} stages x {} epochs; direct: {} epochs (same budget)",
        schedule.n_stages(),
        config.epochs_per_stage,
        schedule.n_stages() * config.epochs_per_stage
    );

    let curriculum = run_curriculum(&manifest, &schedule, &spec, &config, None)?;
    let direct = run_direct(&manifest, &spec, &config, None)?;

    let mut reports = Vec::new();
    if let Some(r) = curriculum.final_report {
        println!(
            "curriculum final weighted F1: {:.3} ({:.1}s)",
            r.weighted.f1, curriculum.log.wall_time_secs
        );
        reports.push(r);
    }
    if let Some(r) = direct.final_report {
        println!(
            "direct     final weighted F1: {:.3} ({:.1}s)",
            r.weighted.f1, direct.log.wall_time_secs
        );
        reports.push(r);
    }

    let table = render_comparison(&reports, &reference_rows())?;
    println!("\n{table}");
    Ok(())
}
