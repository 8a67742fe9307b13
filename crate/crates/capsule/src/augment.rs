//! Tiered augmentation: three transform bundles at increasing intensity,
//! per-class copy planning toward a target count, and seeded execution that
//! materializes augmented images on disk.
//!
//! Every augmented image is a pure function of (global seed, source path,
//! copy index), so execution order and parallelism never change the output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{ClassCatalog, ClassStats, DatasetManifest, Origin, SampleRecord, Split};
use crate::error::{CapsuleError, Result};
use crate::nn::stable_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    HorizontalFlip,
    VerticalFlip,
    Rotate90,
    ColorJitter,
    ShiftScaleRotate,
    GaussianBlur,
}

/// Kind-specific parameter ranges. Factors define symmetric ranges around
/// the identity (brightness 0.2 means a factor in [0.8, 1.2]; hue is a
/// fraction of the hue circle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransformParams {
    None,
    ColorJitter {
        brightness: f32,
        contrast: f32,
        saturation: f32,
        hue: f32,
    },
    ShiftScaleRotate {
        shift_fraction: f32,
        scale_fraction: f32,
        rotate_degrees: f32,
    },
    GaussianBlur {
        kernel_min: u32,
        kernel_max: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub probability: f32,
    pub params: TransformParams,
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(CapsuleError::Config(format!(
                "transform probability {} outside [0, 1]",
                self.probability
            )));
        }
        match (&self.kind, &self.params) {
            (TransformKind::ColorJitter, TransformParams::ColorJitter { brightness, contrast, saturation, hue }) => {
                for (name, v) in [("brightness", brightness), ("contrast", contrast), ("saturation", saturation)] {
                    if !(0.0..=1.0).contains(v) {
                        return Err(CapsuleError::Config(format!("jitter {name} factor {v} outside [0, 1]")));
                    }
                }
                if !(0.0..=0.5).contains(hue) {
                    return Err(CapsuleError::Config(format!("hue fraction {hue} outside [0, 0.5]")));
                }
            }
            (TransformKind::ShiftScaleRotate, TransformParams::ShiftScaleRotate { shift_fraction, scale_fraction, rotate_degrees }) => {
                if !(0.0..=0.5).contains(shift_fraction) {
                    return Err(CapsuleError::Config(format!("shift fraction {shift_fraction} outside [0, 0.5]")));
                }
                if !(0.0..1.0).contains(scale_fraction) {
                    return Err(CapsuleError::Config(format!("scale fraction {scale_fraction} outside [0, 1)")));
                }
                if !(0.0..=180.0).contains(rotate_degrees) {
                    return Err(CapsuleError::Config(format!("rotation limit {rotate_degrees} outside [0, 180]")));
                }
            }
            (TransformKind::GaussianBlur, TransformParams::GaussianBlur { kernel_min, kernel_max }) => {
                for k in [kernel_min, kernel_max] {
                    if *k < 3 || *k % 2 == 0 {
                        return Err(CapsuleError::Config(format!("blur kernel {k} must be odd and >= 3")));
                    }
                }
                if kernel_min > kernel_max {
                    return Err(CapsuleError::Config(format!(
                        "blur kernel range ({kernel_min}, {kernel_max}) is not well-ordered"
                    )));
                }
            }
            (TransformKind::HorizontalFlip | TransformKind::VerticalFlip | TransformKind::Rotate90, TransformParams::None) => {}
            (kind, params) => {
                return Err(CapsuleError::Config(format!(
                    "parameters {params:?} do not match transform kind {kind:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierName {
    Heavy,
    Medium,
    Light,
}

impl std::fmt::Display for TierName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TierName::Heavy => "heavy",
            TierName::Medium => "medium",
            TierName::Light => "light",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationTier {
    pub name: TierName,
    pub transforms: Vec<TransformSpec>,
}

impl AugmentationTier {
    pub fn kinds(&self) -> BTreeSet<TransformKind> {
        self.transforms.iter().map(|t| t.kind).collect()
    }
}

/// Shared parameters for the three tiers, serialized with the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TierParams {
    pub flip_probability: f32,
    pub rotate90_probability: f32,
    pub color_jitter_probability: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub shift_scale_rotate_probability: f32,
    pub shift_fraction: f32,
    pub scale_fraction: f32,
    pub rotate_degrees: f32,
    pub gaussian_blur_probability: f32,
    pub blur_kernel_min: u32,
    pub blur_kernel_max: u32,
}

impl Default for TierParams {
    fn default() -> Self {
        TierParams {
            flip_probability: 0.5,
            rotate90_probability: 0.5,
            color_jitter_probability: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.1,
            shift_scale_rotate_probability: 0.5,
            shift_fraction: 0.0625,
            scale_fraction: 0.10,
            rotate_degrees: 45.0,
            gaussian_blur_probability: 0.5,
            blur_kernel_min: 3,
            blur_kernel_max: 7,
        }
    }
}

/// The three tiers. The transform-kind sets are fixed by contract:
/// light = {hflip, vflip}, medium adds {rotate90, color_jitter}, heavy adds
/// {shift_scale_rotate, gaussian_blur}; only parameters are configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSet {
    pub light: AugmentationTier,
    pub medium: AugmentationTier,
    pub heavy: AugmentationTier,
}

impl TierSet {
    pub fn get(&self, name: TierName) -> &AugmentationTier {
        match name {
            TierName::Light => &self.light,
            TierName::Medium => &self.medium,
            TierName::Heavy => &self.heavy,
        }
    }

    /// Check the subset chain and the exact per-tier kind sets.
    pub fn validate(&self) -> Result<()> {
        for tier in [&self.light, &self.medium, &self.heavy] {
            for t in &tier.transforms {
                t.validate()?;
            }
        }
        let light = self.light.kinds();
        let medium = self.medium.kinds();
        let heavy = self.heavy.kinds();
        let expect_light: BTreeSet<_> =
            [TransformKind::HorizontalFlip, TransformKind::VerticalFlip].into();
        let expect_medium: BTreeSet<_> = expect_light
            .iter()
            .copied()
            .chain([TransformKind::Rotate90, TransformKind::ColorJitter])
            .collect();
        let expect_heavy: BTreeSet<_> = expect_medium
            .iter()
            .copied()
            .chain([TransformKind::ShiftScaleRotate, TransformKind::GaussianBlur])
            .collect();
        if light != expect_light || medium != expect_medium || heavy != expect_heavy {
            return Err(CapsuleError::Config(
                "tier transform sets must be light={flips}, medium=light+{rotate90,color_jitter}, heavy=medium+{shift_scale_rotate,gaussian_blur}".into(),
            ));
        }
        Ok(())
    }
}

pub fn build_tiers(p: &TierParams) -> Result<TierSet> {
    let hflip = TransformSpec {
        kind: TransformKind::HorizontalFlip,
        probability: p.flip_probability,
        params: TransformParams::None,
    };
    let vflip = TransformSpec {
        kind: TransformKind::VerticalFlip,
        probability: p.flip_probability,
        params: TransformParams::None,
    };
    let rot = TransformSpec {
        kind: TransformKind::Rotate90,
        probability: p.rotate90_probability,
        params: TransformParams::None,
    };
    let jitter = TransformSpec {
        kind: TransformKind::ColorJitter,
        probability: p.color_jitter_probability,
        params: TransformParams::ColorJitter {
            brightness: p.brightness,
            contrast: p.contrast,
            saturation: p.saturation,
            hue: p.hue,
        },
    };
    let ssr = TransformSpec {
        kind: TransformKind::ShiftScaleRotate,
        probability: p.shift_scale_rotate_probability,
        params: TransformParams::ShiftScaleRotate {
            shift_fraction: p.shift_fraction,
            scale_fraction: p.scale_fraction,
            rotate_degrees: p.rotate_degrees,
        },
    };
    let blur = TransformSpec {
        kind: TransformKind::GaussianBlur,
        probability: p.gaussian_blur_probability,
        params: TransformParams::GaussianBlur {
            kernel_min: p.blur_kernel_min,
            kernel_max: p.blur_kernel_max,
        },
    };

    let set = TierSet {
        light: AugmentationTier {
            name: TierName::Light,
            transforms: vec![hflip.clone(), vflip.clone()],
        },
        medium: AugmentationTier {
            name: TierName::Medium,
            transforms: vec![hflip.clone(), vflip.clone(), rot.clone(), jitter.clone()],
        },
        heavy: AugmentationTier {
            name: TierName::Heavy,
            transforms: vec![hflip, vflip, rot, jitter, ssr, blur],
        },
    };
    set.validate()?;
    Ok(set)
}

/// Tier from a class count: scarcer classes get heavier augmentation.
/// count < low -> heavy; low <= count < high -> medium; count >= high -> light.
pub fn assign_tier(class_count: i64, thresholds: (usize, usize)) -> Result<TierName> {
    let (low, high) = thresholds;
    if low == 0 || low >= high {
        return Err(CapsuleError::Config(format!(
            "tier thresholds must satisfy 0 < low < high, got ({low}, {high})"
        )));
    }
    if class_count < 0 {
        return Err(CapsuleError::Data(format!(
            "negative class count {class_count}"
        )));
    }
    let count = class_count as usize;
    Ok(if count < low {
        TierName::Heavy
    } else if count < high {
        TierName::Medium
    } else {
        TierName::Light
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub tier: TierName,
    pub copies_per_image: usize,
    pub original_count: usize,
}

/// Per-class augmentation multiplicities toward `target_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub per_class: BTreeMap<String, PlanEntry>,
    pub target_count: usize,
    pub warnings: Vec<String>,
}

impl AugmentationPlan {
    pub fn projected_count(&self, class: &str) -> usize {
        self.per_class
            .get(class)
            .map(|e| e.original_count * (1 + e.copies_per_image))
            .unwrap_or(0)
    }

    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("augmentation plan (target {}):\n", self.target_count));
        for (class, e) in &self.per_class {
            out.push_str(&format!(
                "  {class:<20} tier={:<6} originals={:<6} copies/image={:<3} -> {}\n",
                e.tier.to_string(),
                e.original_count,
                e.copies_per_image,
                e.original_count * (1 + e.copies_per_image),
            ));
        }
        for w in &self.warnings {
            out.push_str(&format!("  warning: {w}\n"));
        }
        out
    }
}

/// Copies per image for abnormal class c: min(cap, ceil(target / count) - 1);
/// the Normal class is never augmented.
pub fn build_plan(
    stats: &ClassStats,
    catalog: &ClassCatalog,
    target_count: usize,
    cap_multiplier: usize,
    thresholds: (usize, usize),
) -> Result<AugmentationPlan> {
    if target_count == 0 {
        return Err(CapsuleError::Config("target_count must be positive".into()));
    }
    let mut per_class = BTreeMap::new();
    let mut warnings = Vec::new();
    for class in catalog.classes() {
        let count = stats.count(class);
        let tier = assign_tier(count as i64, thresholds)?;
        let copies = if catalog.is_normal(class) {
            0
        } else if count == 0 {
            if target_count > 0 {
                warnings.push(format!(
                    "class {class:?} has no original images; cannot augment toward {target_count}"
                ));
            }
            0
        } else {
            let needed = target_count.div_ceil(count).saturating_sub(1);
            needed.min(cap_multiplier)
        };
        per_class.insert(
            class.clone(),
            PlanEntry {
                tier,
                copies_per_image: copies,
                original_count: count,
            },
        );
    }
    Ok(AugmentationPlan {
        per_class,
        target_count,
        warnings,
    })
}

// --- transform execution -----------------------------------------------

fn check_image(img: &RgbImage) -> Result<()> {
    if img.width() == 0 || img.height() == 0 {
        return Err(CapsuleError::Data("empty image".into()));
    }
    Ok(())
}

/// Apply one transform; a no-op when the probability gate does not fire.
/// Deterministic given the generator state.
pub fn apply_transform(img: &RgbImage, spec: &TransformSpec, rng: &mut ChaCha12Rng) -> Result<RgbImage> {
    check_image(img)?;
    spec.validate()?;
    let gate: f32 = rng.random();
    if gate >= spec.probability {
        return Ok(img.clone());
    }
    Ok(match (&spec.kind, &spec.params) {
        (TransformKind::HorizontalFlip, _) => image::imageops::flip_horizontal(img),
        (TransformKind::VerticalFlip, _) => image::imageops::flip_vertical(img),
        (TransformKind::Rotate90, _) => image::imageops::rotate90(img),
        (TransformKind::ColorJitter, TransformParams::ColorJitter { brightness, contrast, saturation, hue }) => {
            let b = rng.random_range(1.0 - brightness..=1.0 + brightness);
            let c = rng.random_range(1.0 - contrast..=1.0 + contrast);
            let s = rng.random_range(1.0 - saturation..=1.0 + saturation);
            let h = rng.random_range(-hue..=*hue);
            color_jitter(img, b, c, s, h)
        }
        (TransformKind::ShiftScaleRotate, TransformParams::ShiftScaleRotate { shift_fraction, scale_fraction, rotate_degrees }) => {
            let dx = rng.random_range(-shift_fraction..=*shift_fraction) * img.width() as f32;
            let dy = rng.random_range(-shift_fraction..=*shift_fraction) * img.height() as f32;
            let scale = rng.random_range(1.0 - scale_fraction..=1.0 + scale_fraction);
            let angle = rng.random_range(-rotate_degrees..=*rotate_degrees);
            shift_scale_rotate(img, dx, dy, scale, angle)
        }
        (TransformKind::GaussianBlur, TransformParams::GaussianBlur { kernel_min, kernel_max }) => {
            let choices: Vec<u32> = (*kernel_min..=*kernel_max).step_by(2).collect();
            let k = choices[rng.random_range(0..choices.len())];
            gaussian_blur(img, k)
        }
        _ => unreachable!("validated above"),
    })
}

/// Apply every transform of a tier, in order, each behind its own gate.
pub fn apply_tier(img: &RgbImage, tier: &AugmentationTier, rng: &mut ChaCha12Rng) -> Result<RgbImage> {
    let mut out = img.clone();
    for spec in &tier.transforms {
        out = apply_transform(&out, spec, rng)?;
    }
    Ok(out)
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn color_jitter(img: &RgbImage, brightness: f32, contrast: f32, saturation: f32, hue_shift: f32) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut buf: Vec<[f32; 3]> = img
        .pixels()
        .map(|p| [p.0[0] as f32, p.0[1] as f32, p.0[2] as f32])
        .collect();

    for px in &mut buf {
        for v in px.iter_mut() {
            *v *= brightness;
        }
    }
    let mean = buf.iter().map(|p| luma(p[0], p[1], p[2])).sum::<f32>() / buf.len() as f32;
    for px in &mut buf {
        for v in px.iter_mut() {
            *v = (*v - mean) * contrast + mean;
        }
    }
    for px in &mut buf {
        let l = luma(px[0], px[1], px[2]);
        for v in px.iter_mut() {
            *v = l + (*v - l) * saturation;
        }
    }
    if hue_shift != 0.0 {
        for px in &mut buf {
            let (hh, ss, vv) = rgb_to_hsv(px[0].clamp(0.0, 255.0), px[1].clamp(0.0, 255.0), px[2].clamp(0.0, 255.0));
            let nh = (hh + hue_shift * 360.0).rem_euclid(360.0);
            let (r, g, b) = hsv_to_rgb(nh, ss, vv);
            *px = [r, g, b];
        }
    }

    let mut out = RgbImage::new(w, h);
    for (dst, src) in out.pixels_mut().zip(buf.iter()) {
        *dst = Rgb([
            src[0].round().clamp(0.0, 255.0) as u8,
            src[1].round().clamp(0.0, 255.0) as u8,
            src[2].round().clamp(0.0, 255.0) as u8,
        ]);
    }
    out
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Affine warp about the image center with bilinear sampling; pixels mapped
/// from outside the source are filled black so the canvas size is kept.
fn shift_scale_rotate(img: &RgbImage, dx: f32, dy: f32, scale: f32, angle_deg: f32) -> RgbImage {
    let (w, h) = img.dimensions();
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());
    let inv_scale = 1.0 / scale;

    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo shift, then rotation, then scale.
            let ox = x as f32 - cx - dx;
            let oy = y as f32 - cy - dy;
            let rx = (cos * ox + sin * oy) * inv_scale + cx;
            let ry = (-sin * ox + cos * oy) * inv_scale + cy;
            out.put_pixel(x, y, bilinear_sample(img, rx, ry));
        }
    }
    out
}

fn bilinear_sample(img: &RgbImage, x: f32, y: f32) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    if x < -0.5 || y < -0.5 || x > w as f32 - 0.5 || y > h as f32 - 0.5 {
        return Rgb([0, 0, 0]);
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let get = |ix: i64, iy: i64| -> [f32; 3] {
        let cx = ix.clamp(0, w as i64 - 1) as u32;
        let cy = iy.clamp(0, h as i64 - 1) as u32;
        let p = img.get_pixel(cx, cy).0;
        [p[0] as f32, p[1] as f32, p[2] as f32]
    };
    let (x0i, y0i) = (x0 as i64, y0 as i64);
    let p00 = get(x0i, y0i);
    let p10 = get(x0i + 1, y0i);
    let p01 = get(x0i, y0i + 1);
    let p11 = get(x0i + 1, y0i + 1);
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = p00[ch] * (1.0 - fx) + p10[ch] * fx;
        let bot = p01[ch] * (1.0 - fx) + p11[ch] * fx;
        out[ch] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Separable Gaussian with clamp-to-edge borders; sigma follows the common
/// kernel-size heuristic 0.3*((k-1)/2 - 1) + 0.8.
fn gaussian_blur(img: &RgbImage, kernel: u32) -> RgbImage {
    let sigma = 0.3 * ((kernel as f32 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (kernel / 2) as i64;
    let mut weights = Vec::with_capacity(kernel as usize);
    let mut sum = 0.0f32;
    for i in -half..=half {
        let w = (-(i as f32 * i as f32) / (2.0 * sigma * sigma)).exp();
        weights.push(w);
        sum += w;
    }
    for w in &mut weights {
        *w /= sum;
    }

    let (w, h) = img.dimensions();
    let mut tmp = vec![[0.0f32; 3]; (w * h) as usize];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = [0.0f32; 3];
            for (wi, dw) in weights.iter().enumerate() {
                let sx = (x + wi as i64 - half).clamp(0, w as i64 - 1) as u32;
                let p = img.get_pixel(sx, y as u32).0;
                for ch in 0..3 {
                    acc[ch] += p[ch] as f32 * dw;
                }
            }
            tmp[(y as u32 * w + x as u32) as usize] = acc;
        }
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = [0.0f32; 3];
            for (wi, dw) in weights.iter().enumerate() {
                let sy = (y + wi as i64 - half).clamp(0, h as i64 - 1) as u32;
                let p = tmp[(sy * w + x as u32) as usize];
                for ch in 0..3 {
                    acc[ch] += p[ch] * dw;
                }
            }
            out.put_pixel(
                x as u32,
                y as u32,
                Rgb([
                    acc[0].round().clamp(0.0, 255.0) as u8,
                    acc[1].round().clamp(0.0, 255.0) as u8,
                    acc[2].round().clamp(0.0, 255.0) as u8,
                ]),
            );
        }
    }
    out
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| CapsuleError::image(path, e))?;
    Ok(img.to_rgb8())
}

/// Seed for one augmented copy: a pure function of the run seed, the source
/// path, and the copy index.
pub fn copy_seed(seed: u64, source: &Path, copy_index: usize) -> u64 {
    stable_hash(&[
        &seed.to_le_bytes(),
        source.to_string_lossy().as_bytes(),
        &(copy_index as u64).to_le_bytes(),
    ])
}

/// Materialize the plan: writes `copies_per_image` augmented variants of
/// every original train image of each planned class under
/// `out_dir/<class>/<source-stem>_aug<k>.png` and returns the manifest
/// extended with the augmented records.
pub fn execute_plan(
    manifest: &DatasetManifest,
    plan: &AugmentationPlan,
    tiers: &TierSet,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    tiers.validate()?;
    for class in plan.per_class.keys() {
        if !manifest.catalog().contains(class) {
            return Err(CapsuleError::UnknownClass {
                name: class.clone(),
                valid: manifest.catalog().classes().to_vec(),
            });
        }
    }

    // Sources: original train records of classes with a positive multiplicity.
    let sources: Vec<&SampleRecord> = manifest
        .records()
        .iter()
        .filter(|r| r.split == Split::Train && r.origin == Origin::Original)
        .filter(|r| plan.per_class.get(&r.class_name).is_some_and(|e| e.copies_per_image > 0))
        .collect();

    // Stems can collide across nested source directories; disambiguate those.
    let mut stem_owners: BTreeMap<(String, String), BTreeSet<&Path>> = BTreeMap::new();
    for r in &sources {
        let stem = file_stem(&r.image_path);
        stem_owners
            .entry((r.class_name.clone(), stem))
            .or_default()
            .insert(r.image_path.as_path());
    }

    for class in plan
        .per_class
        .iter()
        .filter(|(_, e)| e.copies_per_image > 0)
        .map(|(c, _)| c)
    {
        let dir = out_dir.join(class);
        std::fs::create_dir_all(&dir).map_err(|e| CapsuleError::io(&dir, e))?;
    }

    struct Job<'a> {
        record: &'a SampleRecord,
        copy_index: usize,
        out_path: PathBuf,
    }

    let mut jobs = Vec::new();
    for r in &sources {
        let entry = &plan.per_class[&r.class_name];
        let stem = file_stem(&r.image_path);
        let unique = stem_owners[&(r.class_name.clone(), stem.clone())].len() == 1;
        let base = if unique {
            stem
        } else {
            format!("{stem}-{:08x}", stable_hash(&[r.image_path.to_string_lossy().as_bytes()]) as u32)
        };
        for k in 0..entry.copies_per_image {
            jobs.push(Job {
                record: r,
                copy_index: k,
                out_path: out_dir.join(&r.class_name).join(format!("{base}_aug{k}.png")),
            });
        }
    }

    let augmented: Vec<SampleRecord> = jobs
        .par_iter()
        .map(|job| -> Result<SampleRecord> {
            let tier = tiers.get(plan.per_class[&job.record.class_name].tier);
            let img = load_rgb(&job.record.image_path)?;
            let mut rng =
                ChaCha12Rng::seed_from_u64(copy_seed(seed, &job.record.image_path, job.copy_index));
            let aug = apply_tier(&img, tier, &mut rng)?;
            aug.save(&job.out_path)
                .map_err(|e| CapsuleError::image(&job.out_path, e))?;
            Ok(SampleRecord::augmented(
                job.out_path.clone(),
                job.record.class_name.clone(),
                Split::Train,
                job.record.image_path.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = manifest.records().to_vec();
    records.extend(augmented);
    DatasetManifest::new(manifest.catalog().clone(), records)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::compute_stats;
    use crate::synthetic::generate_synthetic;

    fn spec(kind: TransformKind, probability: f32) -> TransformSpec {
        let params = match kind {
            TransformKind::ColorJitter => TransformParams::ColorJitter {
                brightness: 0.2,
                contrast: 0.2,
                saturation: 0.2,
                hue: 0.1,
            },
            TransformKind::ShiftScaleRotate => TransformParams::ShiftScaleRotate {
                shift_fraction: 0.0625,
                scale_fraction: 0.1,
                rotate_degrees: 45.0,
            },
            TransformKind::GaussianBlur => TransformParams::GaussianBlur {
                kernel_min: 3,
                kernel_max: 7,
            },
            _ => TransformParams::None,
        };
        TransformSpec {
            kind,
            probability,
            params,
        }
    }

    fn test_image(seed: u64) -> RgbImage {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut img = RgbImage::new(24, 24);
        for p in img.pixels_mut() {
            *p = Rgb([rng.random(), rng.random(), rng.random()]);
        }
        img
    }

    #[test]
    fn tier_kind_sets_grow_strictly() {
        let tiers = build_tiers(&TierParams::default()).unwrap();
        let light = tiers.light.kinds();
        let medium = tiers.medium.kinds();
        let heavy = tiers.heavy.kinds();
        assert!(light.is_subset(&medium) && light != medium);
        assert!(medium.is_subset(&heavy) && medium != heavy);
        assert_eq!(light.len(), 2);
        assert_eq!(medium.len(), 4);
        assert_eq!(heavy.len(), 6);
    }

    #[test]
    fn tier_validation_rejects_broken_sets() {
        let mut tiers = build_tiers(&TierParams::default()).unwrap();
        tiers.light.transforms.push(spec(TransformKind::GaussianBlur, 0.5));
        assert!(tiers.validate().is_err());
    }

    #[test]
    fn assign_tier_thresholds() {
        let th = (500, 3000);
        assert_eq!(assign_tier(158, th).unwrap(), TierName::Heavy);
        assert_eq!(assign_tier(499, th).unwrap(), TierName::Heavy);
        assert_eq!(assign_tier(500, th).unwrap(), TierName::Medium);
        assert_eq!(assign_tier(2999, th).unwrap(), TierName::Medium);
        assert_eq!(assign_tier(3000, th).unwrap(), TierName::Light);
        assert_eq!(assign_tier(28663, th).unwrap(), TierName::Light);
        assert!(assign_tier(-1, th).is_err());
        assert!(assign_tier(10, (0, 5)).is_err());
        assert!(assign_tier(10, (5, 5)).is_err());
    }

    fn stats_of(pairs: &[(&str, usize)]) -> ClassStats {
        ClassStats {
            counts: pairs.iter().map(|(c, n)| (c.to_string(), *n)).collect(),
            normal_class: "Normal".into(),
            split: Split::Train,
            origin_filter: Some(Origin::Original),
        }
    }

    #[test]
    fn plan_copies_formula() {
        let catalog = ClassCatalog::new(
            vec!["Normal".into(), "Worms".into(), "Mid".into(), "Capped".into(), "Empty".into()],
            "Normal",
        )
        .unwrap();
        let stats = stats_of(&[
            ("Normal", 28663),
            ("Worms", 158),
            ("Mid", 3000),
            ("Capped", 100),
            ("Empty", 0),
        ]);
        let plan = build_plan(&stats, &catalog, 3000, 25, (500, 3000)).unwrap();
        assert_eq!(plan.per_class["Worms"].copies_per_image, 18); // ceil(3000/158)-1
        assert_eq!(plan.per_class["Worms"].tier, TierName::Heavy);
        assert_eq!(plan.per_class["Mid"].copies_per_image, 0); // already at target
        assert_eq!(plan.per_class["Normal"].copies_per_image, 0);
        assert_eq!(plan.per_class["Empty"].copies_per_image, 0);
        assert_eq!(plan.warnings.len(), 1);
        // cap binds: ceil(3000/100)-1 = 29 > 10
        let capped = build_plan(&stats, &catalog, 3000, 10, (500, 3000)).unwrap();
        assert_eq!(capped.per_class["Capped"].copies_per_image, 10);
        // projected counts
        assert_eq!(plan.projected_count("Worms"), 158 * 19);
        assert_eq!(plan.projected_count("Worms"), 3002);
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = test_image(1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let h = spec(TransformKind::HorizontalFlip, 1.0);
        let once = apply_transform(&img, &h, &mut rng).unwrap();
        let twice = apply_transform(&once, &h, &mut rng).unwrap();
        assert_eq!(img.as_raw(), twice.as_raw());
        let v = spec(TransformKind::VerticalFlip, 1.0);
        let once = apply_transform(&img, &v, &mut rng).unwrap();
        let twice = apply_transform(&once, &v, &mut rng).unwrap();
        assert_eq!(img.as_raw(), twice.as_raw());
    }

    #[test]
    fn rotate90_four_times_is_identity() {
        let img = test_image(2);
        let r = spec(TransformKind::Rotate90, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = apply_transform(&cur, &r, &mut rng).unwrap();
        }
        assert_eq!(img.as_raw(), cur.as_raw());
    }

    #[test]
    fn blur_keeps_constant_image_constant() {
        let img = RgbImage::from_pixel(20, 20, Rgb([120, 64, 200]));
        let b = spec(TransformKind::GaussianBlur, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let out = apply_transform(&img, &b, &mut rng).unwrap();
        assert_eq!(img.as_raw(), out.as_raw());
    }

    #[test]
    fn probability_zero_is_identity() {
        let img = test_image(3);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for kind in [
            TransformKind::HorizontalFlip,
            TransformKind::ColorJitter,
            TransformKind::ShiftScaleRotate,
            TransformKind::GaussianBlur,
        ] {
            let out = apply_transform(&img, &spec(kind, 0.0), &mut rng).unwrap();
            assert_eq!(img.as_raw(), out.as_raw());
        }
    }

    #[test]
    fn transforms_are_deterministic_given_rng_state() {
        let img = test_image(4);
        for kind in [
            TransformKind::ColorJitter,
            TransformKind::ShiftScaleRotate,
            TransformKind::GaussianBlur,
        ] {
            let s = spec(kind, 1.0);
            let a = apply_transform(&img, &s, &mut ChaCha12Rng::seed_from_u64(77)).unwrap();
            let b = apply_transform(&img, &s, &mut ChaCha12Rng::seed_from_u64(77)).unwrap();
            assert_eq!(a.as_raw(), b.as_raw());
        }
    }

    #[test]
    fn ssr_preserves_canvas_size() {
        let img = test_image(5);
        let out = shift_scale_rotate(&img, 1.5, -1.0, 1.05, 30.0);
        assert_eq!(out.dimensions(), img.dimensions());
    }

    #[test]
    fn empty_image_is_rejected() {
        let img = RgbImage::new(0, 0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(apply_transform(&img, &spec(TransformKind::HorizontalFlip, 1.0), &mut rng).is_err());
    }

    fn toy_manifest(dir: &Path) -> (ClassCatalog, DatasetManifest) {
        let catalog = ClassCatalog::new(vec!["Normal".into(), "A".into()], "Normal").unwrap();
        let counts: BTreeMap<String, usize> =
            [("Normal".to_string(), 4), ("A".to_string(), 3)].into();
        generate_synthetic(&catalog, &counts, 16, 5, dir).unwrap();
        let manifest = crate::catalog::ingest(dir, &catalog).unwrap();
        (catalog, manifest)
    }

    #[test]
    fn execute_plan_materializes_expected_counts_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let (catalog, manifest) = toy_manifest(&dir.path().join("data"));
        let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original)).unwrap();
        // target 9 with 3 originals -> ceil(9/3)-1 = 2 copies per image
        let plan = build_plan(&stats, &catalog, 9, 25, (500, 3000)).unwrap();
        assert_eq!(plan.per_class["A"].copies_per_image, 2);
        let tiers = build_tiers(&TierParams::default()).unwrap();
        let out_dir = dir.path().join("aug");
        let new_manifest = execute_plan(&manifest, &plan, &tiers, 42, &out_dir).unwrap();

        let aug: Vec<_> = new_manifest
            .records()
            .iter()
            .filter(|r| r.origin == Origin::Augmented)
            .collect();
        assert_eq!(aug.len(), 6); // 3 originals x 2 copies
        for r in &aug {
            assert_eq!(r.class_name, "A");
            assert_eq!(r.split, Split::Train);
            let src = r.source_path.as_ref().unwrap();
            assert!(
                manifest
                    .records()
                    .iter()
                    .any(|o| &o.image_path == src && o.class_name == r.class_name),
                "source {src:?} must be an original record of the same class"
            );
            assert!(r.image_path.exists());
            assert!(r.image_path.to_string_lossy().contains("_aug"));
        }
        let post = compute_stats(&new_manifest, Split::Train, None).unwrap();
        assert_eq!(post.count("A"), 9);
        assert_eq!(post.count("Normal"), 4);
    }

    #[test]
    fn identity_plan_returns_equal_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (catalog, manifest) = toy_manifest(&dir.path().join("data"));
        let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original)).unwrap();
        let plan = build_plan(&stats, &catalog, 1, 25, (500, 3000)).unwrap();
        assert!(plan.per_class.values().all(|e| e.copies_per_image == 0));
        let tiers = build_tiers(&TierParams::default()).unwrap();
        let out = execute_plan(&manifest, &plan, &tiers, 1, &dir.path().join("aug")).unwrap();
        assert_eq!(manifest, out);
    }

    #[test]
    fn execute_plan_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (catalog, manifest) = toy_manifest(&dir.path().join("data"));
        let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original)).unwrap();
        let plan = build_plan(&stats, &catalog, 6, 25, (500, 3000)).unwrap();
        let tiers = build_tiers(&TierParams::default()).unwrap();

        let out_a = dir.path().join("aug_a");
        let out_b = dir.path().join("aug_b");
        let ma = execute_plan(&manifest, &plan, &tiers, 42, &out_a).unwrap();
        let mb = execute_plan(&manifest, &plan, &tiers, 42, &out_b).unwrap();
        let read = |m: &DatasetManifest, which: &Path| -> Vec<(String, Vec<u8>)> {
            let mut v: Vec<_> = m
                .records()
                .iter()
                .filter(|r| r.origin == Origin::Augmented)
                .map(|r| {
                    (
                        r.image_path.strip_prefix(which).unwrap().to_string_lossy().into_owned(),
                        std::fs::read(&r.image_path).unwrap(),
                    )
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(read(&ma, &out_a), read(&mb, &out_b));
        // Different seed -> different bytes somewhere.
        let out_c = dir.path().join("aug_c");
        let mc = execute_plan(&manifest, &plan, &tiers, 43, &out_c).unwrap();
        assert_ne!(read(&ma, &out_a), read(&mc, &out_c));
    }
}
