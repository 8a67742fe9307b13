//! Expand a classification head while retaining the backbone.
//!
//! Builds the tiny hybrid on a binary label space, expands it to a larger
//! label space with row copying, and verifies on a probe batch that (a)
//! backbone features are bit-identical and (b) logits of retained classes
//! are exactly unchanged.
//!
//! Run with: cargo run --release -p capsule --example head_expansion

use ndarray::Array4;

use capsule::model::{build_model, expand_head, Architecture, ModelSpec};

fn main() -> capsule::Result<()> {
    let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
    let names: Vec<String> = vec!["Normal".into(), "Abnormal".into()];
    let model = build_model(&spec, &names, 7)?;
    println!(
        "built {} with {} parameters, classes {:?}",
        spec.architecture,
        model.n_parameters(),
        model.class_names
    );

    let probe = Array4::from_shape_fn((4, 3, 32, 32), |(n, c, y, x)| {
        ((n * 31 + c * 17 + y * 5 + x) as f32 * 0.013).sin() * 0.5 + 0.5
    });

    let mut before = model.clone();
    let logits_before = before.forward(&probe, false)?;
    let (cnn_before, vit_before) = before.forward_features(&probe, false)?;

    let new_names: Vec<String> = vec!["Normal".into(), "Bleeding".into(), "Abnormal-rest".into()];
    let mut expanded = expand_head(model, &new_names, true, 99)?;
    println!("expanded head to {:?}", expanded.class_names);

    let logits_after = expanded.forward(&probe, false)?;
    let (cnn_after, vit_after) = expanded.forward_features(&probe, false)?;

    let backbone_identical =
        cnn_before == cnn_after && vit_before.as_ref() == vit_after.as_ref();
    println!("backbone features bit-identical: {backbone_identical}");

    let mut max_delta = 0.0f32;
    for i in 0..4 {
        // "Normal" is row 0 in both label spaces.
        max_delta = max_delta.max((logits_before[[i, 0]] - logits_after[[i, 0]]).abs());
    }
    println!("max |delta| of retained-class logits: {max_delta} (exact copy -> 0)");
    assert!(backbone_identical && max_delta == 0.0);
    println!("ok");
    Ok(())
}
