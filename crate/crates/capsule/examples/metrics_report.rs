//! Weighted metrics from a confusion matrix, plus the comparison table.
//!
//! Run with: cargo run --release -p capsule --example metrics_report

use capsule::metrics::{
    confusion, reference_rows, render_comparison, weighted_report,
};

fn main() -> capsule::Result<()> {
    let space: Vec<String> = ["Normal", "Bleeding", "Worms"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    // A small prediction run: Normal mostly right, Worms often missed.
    let truth: Vec<String> = ["Normal"; 10]
        .iter()
        .chain(["Bleeding"; 6].iter())
        .chain(["Worms"; 4].iter())
        .map(|s| s.to_string())
        .collect();
    let predicted: Vec<String> = [
        "Normal", "Normal", "Normal", "Normal", "Normal", "Normal", "Normal", "Normal", "Normal",
        "Bleeding", // 9/10 Normal correct
        "Bleeding", "Bleeding", "Bleeding", "Bleeding", "Normal", "Worms", // 4/6 Bleeding
        "Worms", "Worms", "Bleeding", "Normal", // 2/4 Worms
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let cm = confusion(&truth, &predicted, &space)?;
    println!("confusion matrix (rows = true, cols = predicted):");
    for (i, row) in cm.counts.iter().enumerate() {
        println!("  {:<10} {row:?}", cm.labels[i]);
    }

    let report = weighted_report(&cm, "toy classifier")?;
    println!("\n{}", report.to_markdown());
    println!(
        "consistency: weighted recall {} == accuracy {}",
        report.weighted.recall, report.weighted.accuracy
    );

    let table = render_comparison(&[report], &reference_rows())?;
    println!("comparison against the stored reference rows:\n\n{table}");
    Ok(())
}
