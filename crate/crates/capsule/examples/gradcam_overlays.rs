//! GradCAM overlays from a trained tiny hybrid.
//!
//! Trains briefly on a synthetic dataset whose class patterns live in known
//! image quadrants, then emits heatmap overlays for validation images and
//! reports how often the heatmap centroid lands in the right quadrant.
//!
//! Run with: cargo run --release -p capsule --example gradcam_overlays

use std::collections::BTreeMap;
use std::path::PathBuf;

use capsule::catalog::{ingest, ClassCatalog, Split};
use capsule::explain::{gradcam, mass_centroid, overlay, quadrant_of, LayerSelector};
use capsule::model::{Architecture, ModelSpec};
use capsule::synthetic::{class_quadrant, generate_synthetic};
use capsule::trainer::{full_label_view, train_stage, ImageStore, TrainConfig};

fn main() -> capsule::Result<()> {
    let out = PathBuf::from("target/example-out/gradcam_overlays");
    let data = out.join("data");
    std::fs::create_dir_all(&out).map_err(|e| capsule::CapsuleError::io(&out, e))?;

    let catalog = ClassCatalog::new(
        vec!["Normal".into(), "Bleeding".into(), "Polyp".into(), "Worms".into()],
        "Normal",
    )?;
    let counts: BTreeMap<String, usize> = catalog
        .classes()
        .iter()
        .map(|c| (c.clone(), 40usize))
        .collect();
    generate_synthetic(&catalog, &counts, 32, 13, &data)?;
    let manifest = ingest(&data, &catalog)?;

    // Short training run; the patterns are easy.
    let view = full_label_view(&manifest);
    let spec = ModelSpec::new(Architecture::TinyHybrid, catalog.len());
    let mut model = capsule::model::build_model(&spec, &view.stage.label_space, 13)?;
    let mut store = ImageStore::new(32);
    let config = TrainConfig {
        batch_size: 32,
        seed: 13,
        ..TrainConfig::default()
    };
    let records = train_stage(&mut model, &view, &mut store, &config, 12)?;
    println!(
        "trained 12 epochs, final loss {:.4}",
        records.last().unwrap().train_loss
    );

    let mut hits = 0usize;
    let mut total = 0usize;
    for class in catalog.classes() {
        let expected_quadrant = class_quadrant(&catalog, class)?;
        for record in manifest
            .split_records(Split::Val)
            .filter(|r| &r.class_name == class)
            .take(2)
        {
            let heatmap = gradcam(&mut model, &record.image_path, class, LayerSelector::LastConv)?;
            let stem = record.image_path.file_stem().unwrap().to_string_lossy();
            let path = out.join(format!("{class}_{stem}_cam.png"));
            overlay(&heatmap, &record.image_path, 0.5, &path)?;

            if let Some(centroid) = mass_centroid(&heatmap.upsampled) {
                let q = quadrant_of(centroid, heatmap.upsampled.dim().0);
                total += 1;
                if q == expected_quadrant {
                    hits += 1;
                }
                println!(
                    "{:<st$} pattern quadrant {expected_quadrant}, heatmap centroid quadrant {q} -> {}",
                    path.file_name().unwrap().to_string_lossy(),
                    path.display(),
                    st = 38
                );
            }
        }
    }
    println!("\ncentroid-in-quadrant: {hits}/{total}");
    Ok(())
}
