//! Post-hoc GradCAM on the CNN branch, plus overlay rendering.
//!
//! The map for a target class is rectify(sum_k alpha_k A_k) where A are the
//! activations of a chosen convolutional op and alpha_k is the spatial mean
//! of the class logit's gradient on channel k. Maps are normalized by their
//! maximum (a zero map stays zero) and bilinearly upsampled to input size.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3, Array4};

use crate::error::{CapsuleError, Result};
use crate::model::TrainedModel;

/// Which CNN-branch op to read activations from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerSelector {
    /// The last spatial op of the CNN branch (default).
    #[default]
    LastConv,
    /// Explicit op index into the CNN branch stack.
    Index(usize),
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Feature-map-resolution grid, values in [0, 1].
    pub grid: Array2<f32>,
    /// Input-resolution map, values in [0, 1].
    pub upsampled: Array2<f32>,
    pub target_class: String,
    pub input_ref: PathBuf,
}

/// The pure math core: channel weights from gradient means, weighted sum,
/// rectification, max-normalization. `activations` and `grads` are [C, H, W].
pub fn cam_from_gradients(activations: &Array3<f32>, grads: &Array3<f32>) -> Result<Array2<f32>> {
    if activations.dim() != grads.dim() {
        return Err(CapsuleError::Explain(format!(
            "activation shape {:?} does not match gradient shape {:?}",
            activations.dim(),
            grads.dim()
        )));
    }
    let (c, h, w) = activations.dim();
    if h == 0 || w == 0 {
        return Err(CapsuleError::Explain(
            "selected layer has no spatial extent".into(),
        ));
    }
    let mut map = Array2::<f32>::zeros((h, w));
    for k in 0..c {
        let alpha = grads.index_axis(ndarray::Axis(0), k).mean().unwrap_or(0.0);
        let a_k = activations.index_axis(ndarray::Axis(0), k);
        ndarray::Zip::from(&mut map).and(&a_k).for_each(|m, &a| {
            *m += alpha * a;
        });
    }
    map.mapv_inplace(|v| v.max(0.0));
    let max = map.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        map.mapv_inplace(|v| v / max);
    }
    Ok(map)
}

/// Bilinear upsample with corner alignment; a 1x1 grid becomes constant.
pub fn upsample_bilinear(grid: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = grid.dim();
    let mut out = Array2::<f32>::zeros((out_h, out_w));
    for oy in 0..out_h {
        for ox in 0..out_w {
            let sy = if out_h > 1 {
                oy as f32 * (h - 1) as f32 / (out_h - 1) as f32
            } else {
                0.0
            };
            let sx = if out_w > 1 {
                ox as f32 * (w - 1) as f32 / (out_w - 1) as f32
            } else {
                0.0
            };
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = sy - y0 as f32;
            let fx = sx - x0 as f32;
            let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
            let bot = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
            out[[oy, ox]] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// GradCAM for one image tensor ([1, 3, S, S]) against `target_class`.
pub fn gradcam_tensor(
    model: &mut TrainedModel,
    x: &Array4<f32>,
    target_class: &str,
    selector: LayerSelector,
    input_ref: &Path,
) -> Result<Heatmap> {
    let class_idx = model.class_index(target_class)?;
    let layer = match selector {
        LayerSelector::LastConv => model.last_conv_layer(),
        LayerSelector::Index(i) => i,
    };
    let (logits, activation) = model.forward_with_activation(x, layer)?;
    let (n, k) = logits.dim();
    if n != 1 {
        return Err(CapsuleError::Explain(format!(
            "gradcam expects a single-image batch, got {n}"
        )));
    }
    let mut dlogits = Array2::<f32>::zeros((1, k));
    dlogits[[0, class_idx]] = 1.0;
    let grad = model.backward_to_activation(&dlogits, layer);

    let act3 = activation.index_axis(ndarray::Axis(0), 0).to_owned();
    let grad3 = grad.index_axis(ndarray::Axis(0), 0).to_owned();
    let grid = cam_from_gradients(&act3, &grad3)?;
    let size = model.spec.input_size;
    let upsampled = upsample_bilinear(&grid, size, size);
    Ok(Heatmap {
        grid,
        upsampled,
        target_class: target_class.to_string(),
        input_ref: input_ref.to_path_buf(),
    })
}

/// GradCAM for an image file; the image is resized to the model input size.
pub fn gradcam(
    model: &mut TrainedModel,
    image_path: &Path,
    target_class: &str,
    selector: LayerSelector,
) -> Result<Heatmap> {
    let x = load_input(model, image_path)?;
    gradcam_tensor(model, &x, target_class, selector, image_path)
}

/// Model input tensor for an image file.
pub fn load_input(model: &TrainedModel, image_path: &Path) -> Result<Array4<f32>> {
    let img = crate::augment::load_rgb(image_path)?;
    let s = model.spec.input_size;
    let img = if img.width() as usize != s || img.height() as usize != s {
        image::imageops::resize(&img, s as u32, s as u32, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    let mut x = Array4::<f32>::zeros((1, 3, s, s));
    for (px, py, p) in img.enumerate_pixels() {
        for c in 0..3 {
            x[[0, c, py as usize, px as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(x)
}

/// Predicted class name for a single image file.
pub fn predict_class(model: &mut TrainedModel, image_path: &Path) -> Result<String> {
    let x = load_input(model, image_path)?;
    let logits = model.forward(&x, false)?;
    let idx = crate::nn::argmax_rows(&logits)[0];
    Ok(model.class_names[idx].clone())
}

fn colormap(v: f32) -> [u8; 3] {
    // Blue -> cyan -> green -> yellow -> red.
    let v = v.clamp(0.0, 1.0) * 4.0;
    let seg = v.floor().min(3.0);
    let t = v - seg;
    let lerp = |a: f32, b: f32| (a + (b - a) * t).round().clamp(0.0, 255.0) as u8;
    match seg as u32 {
        0 => [0, lerp(0.0, 255.0), 255],
        1 => [0, 255, lerp(255.0, 0.0)],
        2 => [lerp(0.0, 255.0), 255, 0],
        _ => [255, lerp(255.0, 0.0), 0],
    }
}

/// Blend the color-mapped heatmap over the image at opacity `alpha`;
/// output dimensions equal the input image's.
pub fn overlay(heatmap: &Heatmap, image_path: &Path, alpha: f32, out: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CapsuleError::Explain(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let img = crate::augment::load_rgb(image_path)?;
    let (w, h) = img.dimensions();
    let map = upsample_bilinear(&heatmap.grid, h as usize, w as usize);
    let mut out_img = RgbImage::new(w, h);
    for (x, y, p) in img.enumerate_pixels() {
        let v = map[[y as usize, x as usize]];
        let cmap = colormap(v);
        let mut blended = [0u8; 3];
        for c in 0..3 {
            let b = (1.0 - alpha) * p.0[c] as f32 + alpha * cmap[c] as f32;
            blended[c] = b.round().clamp(0.0, 255.0) as u8;
        }
        out_img.put_pixel(x, y, Rgb(blended));
    }
    out_img.save(out).map_err(|e| CapsuleError::image(out, e))
}

/// Raw grid dump as CSV (one row per grid line).
pub fn dump_grid_csv(heatmap: &Heatmap, out: &Path) -> Result<()> {
    let mut s = String::new();
    for row in heatmap.grid.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    std::fs::write(out, s).map_err(|e| CapsuleError::io(out, e))
}

/// Mass centroid of the upsampled map, as (x, y) in pixel coordinates.
pub fn mass_centroid(map: &Array2<f32>) -> Option<(f32, f32)> {
    let total: f32 = map.sum();
    if total <= 0.0 {
        return None;
    }
    let (h, w) = map.dim();
    let mut cx = 0.0f32;
    let mut cy = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            let m = map[[y, x]];
            cx += m * x as f32;
            cy += m * y as f32;
        }
    }
    Some((cx / total, cy / total))
}

/// Quadrant (0 TL, 1 TR, 2 BL, 3 BR) containing a point of a size x size map.
pub fn quadrant_of(point: (f32, f32), size: usize) -> usize {
    let half = size as f32 / 2.0;
    match (point.0 >= half, point.1 >= half) {
        (false, false) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (true, true) => 3,
    }
}
