//! Curriculum training for imbalanced capsule-endoscopy image
//! classification.
//!
//! The library covers the whole workflow for multi-class abnormality
//! classifiers trained on heavily skewed image datasets:
//!
//! - [`catalog`] — class catalogs, dataset manifests (CSV or directory
//!   ingestion), class-distribution statistics.
//! - [`synthetic`] — deterministic toy datasets with per-class localized
//!   patterns, for desk-scale experiments and tests.
//! - [`augment`] — three augmentation tiers (light/medium/heavy), per-class
//!   copy planning toward a target count, seeded execution to disk.
//! - [`curriculum`] — staged label spaces: Normal-vs-Abnormal first, then
//!   one abnormal class per stage, ordered by data availability.
//! - [`model`] — ResNet50, a ViT-CNN hybrid (ResNet34 branch + ViT branch,
//!   concatenated features), and a laptop-scale tiny hybrid; head expansion
//!   that retains the backbone bit-exactly.
//! - [`trainer`] — the staged loop (Adam, lr 1e-3 default) plus a
//!   budget-matched direct baseline; deterministic given the seed.
//! - [`explain`] — GradCAM on the CNN branch with overlay rendering.
//! - [`metrics`] — confusion matrices, support-weighted metrics, and the
//!   comparison table with stored reference rows.
//! - [`plot`] — class-distribution bar charts as PNG.
//! - [`config`] / [`cli`] — the TOML run config and the `capsule` binary
//!   (`stats`, `augment`, `train`, `explain`, `report`).
//!
//! ## Runnable examples
//!
//! One example per capability, smallest first:
//!
//! ```text
//! cargo run --release -p capsule --example dataset_stats
//! cargo run --release -p capsule --example augmentation_balancing
//! cargo run --release -p capsule --example curriculum_schedule
//! cargo run --release -p capsule --example head_expansion
//! cargo run --release -p capsule --example metrics_report
//! cargo run --release -p capsule --example train_curriculum
//! cargo run --release -p capsule --example compare_training_modes
//! cargo run --release -p capsule --example gradcam_overlays
//! ```
//!
//! Each example writes its artifacts under `target/example-out/<name>/`.
//!
//! ## Quick start
//!
//! ```no_run
//! use std::collections::BTreeMap;
//! use capsule::catalog::{ClassCatalog, ingest, compute_stats, Split, Origin};
//! use capsule::synthetic::generate_synthetic;
//!
//! let catalog = ClassCatalog::new(
//!     vec!["Normal".into(), "Bleeding".into(), "Worms".into()],
//!     "Normal",
//! )?;
//! let counts: BTreeMap<String, usize> =
//!     [("Normal".into(), 200), ("Bleeding".into(), 40), ("Worms".into(), 12)].into();
//! generate_synthetic(&catalog, &counts, 32, 7, std::path::Path::new("toy"))?;
//! let manifest = ingest(std::path::Path::new("toy"), &catalog)?;
//! let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original))?;
//! println!("imbalance ratio: {:.2}", stats.imbalance_ratio());
//! # Ok::<(), capsule::CapsuleError>(())
//! ```

pub mod augment;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod synthetic;
pub mod trainer;

pub use error::{CapsuleError, Result};
