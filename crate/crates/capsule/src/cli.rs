//! Command-line pipeline: stats -> augment -> train -> explain/report.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 data error,
//! 4 training abort.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::catalog::{compute_stats, ingest, Origin, Split};
use crate::config::RunConfig;
use crate::curriculum::build_schedule;
use crate::error::{CapsuleError, Result};
use crate::explain::{dump_grid_csv, gradcam, overlay, predict_class, LayerSelector};
use crate::metrics::{reference_rows, render_comparison, render_comparison_csv, MetricsReport};
use crate::model::checkpoint;
use crate::plot::emit_distribution_plot;
use crate::trainer::{run_curriculum, run_direct, TrainOutcome};
use crate::{augment, config::OrderingSource};

#[derive(Parser)]
#[command(
    name = "capsule",
    version,
    about = "Curriculum training for imbalanced capsule-endoscopy image classification"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the dataset and emit class-distribution stats and plots.
    Stats {
        #[arg(long)]
        config: PathBuf,
        /// Omit the Normal class from the emitted plot.
        #[arg(long)]
        no_normal: bool,
    },
    /// Plan tiered augmentation toward the target count and execute it.
    Augment {
        #[arg(long)]
        config: PathBuf,
        /// Print the plan without writing any files.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train on the augmented manifest (curriculum, direct, or both).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's train.curriculum flag.
        #[arg(long, value_enum)]
        mode: Option<TrainMode>,
    },
    /// Emit GradCAM overlays for images against a trained checkpoint.
    Explain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        /// Target class; the model's prediction per image when absent.
        #[arg(long)]
        class: Option<String>,
        /// Overlay opacity in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        alpha: f32,
        /// Also dump the raw heatmap grid as CSV.
        #[arg(long)]
        dump_grid: bool,
    },
    /// Render the comparison table from stored metric reports.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Curriculum,
    Direct,
    Both,
}

/// Entry point for the binary: parse, dispatch, map errors to exit codes.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Test-friendly entry point.
pub fn run_with_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| CapsuleError::Config(format!("argument error: {e}")))?;
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { config, no_normal } => cmd_stats(&config, no_normal),
        Command::Augment { config, dry_run } => cmd_augment(&config, dry_run),
        Command::Train { config, mode } => cmd_train(&config, mode),
        Command::Explain {
            config,
            checkpoint,
            images,
            class,
            alpha,
            dump_grid,
        } => cmd_explain(&config, &checkpoint, &images, class.as_deref(), alpha, dump_grid),
        Command::Report { config } => cmd_report(&config),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let config = RunConfig::from_toml_file(path)?;
    config.validate()?;
    Ok(config)
}

pub fn cmd_stats(config_path: &Path, no_normal: bool) -> Result<()> {
    let config = load_config(config_path)?;
    let catalog = config.load_catalog()?;
    let manifest = ingest(config.dataset_source(), &catalog)?;
    let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original))?;
    println!("{stats}");

    config.write_snapshot()?;
    let out = config.out_dir();
    if !no_normal {
        let with = out.join("distribution_with_normal.png");
        emit_distribution_plot(&stats, true, &with)?;
        println!("wrote {}", with.display());
    }
    let without = out.join("distribution_without_normal.png");
    emit_distribution_plot(&stats, false, &without)?;
    println!("wrote {}", without.display());
    Ok(())
}

pub fn cmd_augment(config_path: &Path, dry_run: bool) -> Result<()> {
    let config = load_config(config_path)?;
    let catalog = config.load_catalog()?;
    let manifest = ingest(config.dataset_source(), &catalog)?;
    let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original))?;
    let tiers = augment::build_tiers(&config.augment.params)?;
    let plan = augment::build_plan(
        &stats,
        &catalog,
        config.augment.target_count,
        config.augment.cap_multiplier,
        (config.augment.low_threshold, config.augment.high_threshold),
    )?;
    print!("{}", plan.describe());
    if dry_run {
        println!("dry run: nothing written");
        return Ok(());
    }

    config.write_snapshot()?;
    let out = config.out_dir();
    let aug_dir = out.join("augmented");
    let new_manifest = augment::execute_plan(&manifest, &plan, &tiers, config.seed, &aug_dir)?;
    let manifest_path = config.augmented_manifest_path();
    new_manifest.export_csv(&manifest_path)?;
    println!("wrote {}", manifest_path.display());

    let post = compute_stats(&new_manifest, Split::Train, None)?;
    println!("post-augmentation counts:");
    for (class, count) in &post.counts {
        println!("  {class:<20} {count}");
    }
    let plot_path = out.join("post_augmentation_distribution.png");
    emit_distribution_plot(&post, false, &plot_path)?;
    println!("wrote {}", plot_path.display());
    Ok(())
}

pub fn cmd_train(config_path: &Path, mode: Option<TrainMode>) -> Result<()> {
    let config = load_config(config_path)?;
    let catalog = config.load_catalog()?;
    let manifest_path = config.augmented_manifest_path();
    if !manifest_path.is_file() {
        return Err(CapsuleError::Data(format!(
            "augmented manifest {} not found; run `capsule augment` first",
            manifest_path.display()
        )));
    }
    let manifest = ingest(&manifest_path, &catalog)?;
    let tc = config.train_config()?;
    let mode = mode.unwrap_or(if tc.curriculum {
        TrainMode::Curriculum
    } else {
        TrainMode::Direct
    });

    config.write_snapshot()?;
    let out = config.out_dir().to_path_buf();
    let spec = config.model_spec(catalog.len())?;

    let ordering_stats = match config.curriculum.ordering_source {
        OrderingSource::Original => compute_stats(&manifest, Split::Train, Some(Origin::Original))?,
        OrderingSource::PostAugment => compute_stats(&manifest, Split::Train, None)?,
    };

    let mut reports: Vec<MetricsReport> = Vec::new();

    if matches!(mode, TrainMode::Curriculum | TrainMode::Both) {
        let schedule = build_schedule(&ordering_stats, &catalog, config.curriculum.remainder_mode)?;
        println!("{}", schedule.describe());
        let TrainOutcome {
            log, final_report, ..
        } = run_curriculum(&manifest, &schedule, &spec, &tc, Some(&out))?;
        log.to_json_file(&out.join("training_log_curriculum.json"))?;
        if let Some(report) = final_report {
            println!("{}", report.to_markdown());
            report.to_json_file(&out.join("report_curriculum.json"))?;
            reports.push(report);
        }
        println!("curriculum training done in {:.1}s", log.wall_time_secs);
    }

    if matches!(mode, TrainMode::Direct | TrainMode::Both) {
        let TrainOutcome {
            log, final_report, ..
        } = run_direct(&manifest, &spec, &tc, Some(&out))?;
        log.to_json_file(&out.join("training_log_direct.json"))?;
        if let Some(report) = final_report {
            println!("{}", report.to_markdown());
            report.to_json_file(&out.join("report_direct.json"))?;
            reports.push(report);
        }
        println!("direct training done in {:.1}s", log.wall_time_secs);
    }

    if mode == TrainMode::Both {
        write_comparison(&out, &reports)?;
    }
    Ok(())
}

fn write_comparison(out: &Path, reports: &[MetricsReport]) -> Result<()> {
    let md = render_comparison(reports, &reference_rows())?;
    let md_path = out.join("comparison.md");
    std::fs::write(&md_path, &md).map_err(|e| CapsuleError::io(&md_path, e))?;
    let csv = render_comparison_csv(reports, &reference_rows())?;
    let csv_path = out.join("comparison.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CapsuleError::io(&csv_path, e))?;
    println!("{md}");
    println!("wrote {} and {}", md_path.display(), csv_path.display());
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

pub fn cmd_explain(
    config_path: &Path,
    checkpoint_path: &Path,
    images: &[PathBuf],
    class: Option<&str>,
    alpha: f32,
    dump_grid: bool,
) -> Result<()> {
    let config = RunConfig::from_toml_file(config_path)?;
    let out = config.out_dir();
    std::fs::create_dir_all(out).map_err(|e| CapsuleError::io(out, e))?;
    let (mut model, stage) = checkpoint::load(checkpoint_path)?;
    println!(
        "loaded {} (stage {stage}, classes: {})",
        checkpoint_path.display(),
        model.class_names.join(", ")
    );
    if let Some(c) = class {
        // Fail fast with the valid class list before touching any image.
        model.class_index(c)?;
    }

    for image in images {
        let target = match class {
            Some(c) => c.to_string(),
            None => predict_class(&mut model, image)?,
        };
        let heatmap = gradcam(&mut model, image, &target, LayerSelector::LastConv)?;
        let stem = image
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image");
        let out_png = out.join(format!("{stem}_{}_cam.png", sanitize(&target)));
        overlay(&heatmap, image, alpha, &out_png)?;
        println!("wrote {}", out_png.display());
        if dump_grid {
            let out_csv = out.join(format!("{stem}_{}_cam.csv", sanitize(&target)));
            dump_grid_csv(&heatmap, &out_csv)?;
            println!("wrote {}", out_csv.display());
        }
    }
    Ok(())
}

pub fn cmd_report(config_path: &Path) -> Result<()> {
    let config = RunConfig::from_toml_file(config_path)?;
    let out = config.out_dir();
    let mut reports = Vec::new();
    for name in ["report_curriculum.json", "report_direct.json"] {
        let path = out.join(name);
        if path.is_file() {
            reports.push(MetricsReport::from_json_file(&path)?);
        }
    }
    write_comparison(out, &reports)
}
