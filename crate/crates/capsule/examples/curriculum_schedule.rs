//! Build a staged curriculum from class counts and inspect label remapping.
//!
//! Stage 0 is binary Normal-vs-Abnormal; each later stage introduces the
//! abnormal class with the most training images left, so the scarcest class
//! arrives last. Shows both remainder modes.
//!
//! Run with: cargo run --release -p capsule --example curriculum_schedule

use std::collections::BTreeMap;

use capsule::catalog::{ClassCatalog, ClassStats, Origin, Split};
use capsule::curriculum::{build_schedule, remap_label, RemainderMode};

fn main() -> capsule::Result<()> {
    let catalog = ClassCatalog::new(
        vec![
            "Normal".into(),
            "Angioectasia".into(),
            "Bleeding".into(),
            "Worms".into(),
        ],
        "Normal",
    )?;
    let counts: BTreeMap<String, usize> = [
        ("Normal".to_string(), 28663),
        ("Angioectasia".to_string(), 2900),
        ("Bleeding".to_string(), 800),
        ("Worms".to_string(), 158),
    ]
    .into();
    let stats = ClassStats {
        counts,
        normal_class: "Normal".into(),
        split: Split::Train,
        origin_filter: Some(Origin::Original),
    };

    let schedule = build_schedule(&stats, &catalog, RemainderMode::Aggregate)?;
    println!("{}", schedule.describe());
    println!("introduction order (easiest first): {:?}", schedule.ordering);

    println!("\nlabel remapping per stage for class \"Worms\":");
    for stage in &schedule.stages {
        let label = remap_label(stage, "Worms", &catalog)?;
        println!("  stage {} -> {:?}", stage.index, label);
    }

    let dropped = build_schedule(&stats, &catalog, RemainderMode::Drop)?;
    println!("\ndrop mode (not-yet-introduced classes excluded):");
    println!("{}", dropped.describe());
    println!(
        "stage 1 mapping of \"Worms\" in drop mode: {:?}",
        remap_label(&dropped.stages[1], "Worms", &catalog)?
    );
    Ok(())
}
