//! Synthetic toy datasets for desk-scale runs.
//!
//! Each class renders a distinctive colored shape confined to a fixed image
//! quadrant over a noisy dark background, so small models separate the
//! classes quickly and spatial attributions have a known ground-truth
//! region. Output is a `train/<class>/`, `val/<class>/` directory tree; the
//! whole tree is a pure function of (catalog, counts, image size, seed) at
//! the byte level.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::catalog::{ClassCatalog, Split};
use crate::error::{CapsuleError, Result};
use crate::nn::stable_hash;

/// Saturated, well-separated colors; class i uses entry i mod 10.
pub const CLASS_PALETTE: [[u8; 3]; 10] = [
    [231, 76, 60],   // red
    [46, 204, 113],  // green
    [52, 152, 219],  // blue
    [241, 196, 15],  // yellow
    [155, 89, 182],  // purple
    [230, 126, 34],  // orange
    [26, 188, 156],  // teal
    [236, 64, 122],  // pink
    [149, 165, 166], // gray
    [121, 85, 72],   // brown
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
}

/// Quadrants indexed 0..4: top-left, top-right, bottom-left, bottom-right.
pub fn class_quadrant(catalog: &ClassCatalog, class: &str) -> Result<usize> {
    Ok(catalog.index_of(class)? % 4)
}

pub fn class_shape(catalog: &ClassCatalog, class: &str) -> Result<Shape> {
    let idx = catalog.index_of(class)?;
    Ok(match idx % 4 {
        0 => Shape::Circle,
        1 => Shape::Square,
        2 => Shape::Triangle,
        _ => Shape::Diamond,
    })
}

pub fn class_color(catalog: &ClassCatalog, class: &str) -> Result<[u8; 3]> {
    let idx = catalog.index_of(class)?;
    Ok(CLASS_PALETTE[idx % CLASS_PALETTE.len()])
}

/// Validation counts derived from the train counts: ceil(n / 5).
pub fn val_count(train_count: usize) -> usize {
    train_count.div_ceil(5)
}

/// Render the dataset tree under `root`. `per_class_counts` gives train
/// counts; classes must belong to the catalog, zero counts yield empty
/// class directories. Re-running with identical arguments rewrites a
/// byte-identical tree.
pub fn generate_synthetic(
    catalog: &ClassCatalog,
    per_class_counts: &BTreeMap<String, usize>,
    image_size: u32,
    seed: u64,
    root: &Path,
) -> Result<()> {
    if image_size < 16 {
        return Err(CapsuleError::Config(format!(
            "image_size must be at least 16, got {image_size}"
        )));
    }
    for class in per_class_counts.keys() {
        if !catalog.contains(class) {
            return Err(CapsuleError::UnknownClass {
                name: class.clone(),
                valid: catalog.classes().to_vec(),
            });
        }
    }

    let mut jobs: Vec<(String, Split, usize)> = Vec::new();
    for (class, &n_train) in per_class_counts {
        for split in [Split::Train, Split::Val] {
            let dir = root.join(split.as_str()).join(class);
            std::fs::create_dir_all(&dir).map_err(|e| CapsuleError::io(&dir, e))?;
            let n = match split {
                Split::Train => n_train,
                Split::Val => {
                    if n_train == 0 {
                        0
                    } else {
                        val_count(n_train)
                    }
                }
            };
            for idx in 0..n {
                jobs.push((class.clone(), split, idx));
            }
        }
    }

    jobs.par_iter().try_for_each(|(class, split, idx)| {
        let img = render_sample(catalog, class, *split, *idx, image_size, seed)?;
        let path = root
            .join(split.as_str())
            .join(class)
            .join(format!("img_{idx:05}.png"));
        img.save(&path).map_err(|e| CapsuleError::image(&path, e))
    })?;
    Ok(())
}

fn render_sample(
    catalog: &ClassCatalog,
    class: &str,
    split: Split,
    idx: usize,
    size: u32,
    seed: u64,
) -> Result<RgbImage> {
    let h = stable_hash(&[
        &seed.to_le_bytes(),
        split.as_str().as_bytes(),
        class.as_bytes(),
        &(idx as u64).to_le_bytes(),
    ]);
    let mut rng = ChaCha12Rng::seed_from_u64(h);

    let color = class_color(catalog, class)?;
    let shape = class_shape(catalog, class)?;
    let quadrant = class_quadrant(catalog, class)?;

    let s = size as i64;
    let mut img = RgbImage::new(size, size);
    // Dark noisy background, identical in distribution for every class.
    for p in img.pixels_mut() {
        let base: u8 = rng.random_range(8..=40);
        let dr: i16 = rng.random_range(-6..=6);
        let dg: i16 = rng.random_range(-6..=6);
        let db: i16 = rng.random_range(-6..=6);
        *p = Rgb([
            (base as i16 + dr).clamp(0, 255) as u8,
            (base as i16 + dg).clamp(0, 255) as u8,
            (base as i16 + db).clamp(0, 255) as u8,
        ]);
    }

    // Shape confined to the class quadrant, with jittered center and size.
    let half = s / 2;
    let (qx, qy) = match quadrant {
        0 => (0, 0),
        1 => (half, 0),
        2 => (0, half),
        _ => (half, half),
    };
    let r_min = (s / 10).max(2);
    let r_max = (s / 7).max(r_min + 1);
    let radius = rng.random_range(r_min..=r_max);
    let margin = radius + 1;
    let cx = qx + rng.random_range(margin..=(half - margin).max(margin));
    let cy = qy + rng.random_range(margin..=(half - margin).max(margin));

    for y in (cy - radius).max(0)..(cy + radius + 1).min(s) {
        for x in (cx - radius).max(0)..(cx + radius + 1).min(s) {
            let dx = x - cx;
            let dy = y - cy;
            let inside = match shape {
                Shape::Circle => dx * dx + dy * dy <= radius * radius,
                Shape::Square => dx.abs() <= radius * 7 / 10 && dy.abs() <= radius * 7 / 10,
                Shape::Triangle => dy >= -radius / 2 && dx.abs() * 2 <= (radius - dy).max(0),
                Shape::Diamond => dx.abs() + dy.abs() <= radius,
            };
            if inside {
                let jr: i16 = rng.random_range(-10..=10);
                let jg: i16 = rng.random_range(-10..=10);
                let jb: i16 = rng.random_range(-10..=10);
                img.put_pixel(
                    x as u32,
                    y as u32,
                    Rgb([
                        (color[0] as i16 + jr).clamp(0, 255) as u8,
                        (color[1] as i16 + jg).clamp(0, 255) as u8,
                        (color[2] as i16 + jb).clamp(0, 255) as u8,
                    ]),
                );
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ingest;

    fn counts(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(c, n)| (c.to_string(), *n)).collect()
    }

    fn catalog4() -> ClassCatalog {
        ClassCatalog::new(
            vec!["Normal".into(), "A".into(), "B".into(), "C".into()],
            "Normal",
        )
        .unwrap()
    }

    fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = walkdir::WalkDir::new(root)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                let rel = p.strip_prefix(root).unwrap().to_str().unwrap().to_string();
                (rel, std::fs::read(&p).unwrap())
            })
            .collect()
    }

    #[test]
    fn same_seed_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cat = ClassCatalog::new(vec!["A".into(), "B".into()], "A").unwrap();
        let c = counts(&[("A", 5), ("B", 5)]);
        let r1 = dir.path().join("one");
        let r2 = dir.path().join("two");
        generate_synthetic(&cat, &c, 24, 7, &r1).unwrap();
        generate_synthetic(&cat, &c, 24, 7, &r2).unwrap();
        let t1 = tree_bytes(&r1);
        let t2 = tree_bytes(&r2);
        assert!(!t1.is_empty());
        assert_eq!(t1, t2);
        // And a different seed changes content.
        let r3 = dir.path().join("three");
        generate_synthetic(&cat, &c, 24, 8, &r3).unwrap();
        assert_ne!(t1, tree_bytes(&r3));
    }

    #[test]
    fn zero_count_class_dir_exists_and_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cat = ClassCatalog::new(vec!["A".into(), "B".into()], "A").unwrap();
        let c = counts(&[("A", 0), ("B", 2)]);
        generate_synthetic(&cat, &c, 16, 3, dir.path()).unwrap();
        let a_train = dir.path().join("train").join("A");
        assert!(a_train.is_dir());
        assert_eq!(std::fs::read_dir(&a_train).unwrap().count(), 0);
        assert!(dir.path().join("val").join("A").is_dir());
    }

    #[test]
    fn generated_counts_match_request_via_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog4();
        let c = counts(&[("Normal", 10), ("A", 10), ("B", 10), ("C", 10)]);
        generate_synthetic(&cat, &c, 16, 11, dir.path()).unwrap();
        let manifest = ingest(dir.path(), &cat).unwrap();
        let train: Vec<_> = manifest.split_records(Split::Train).collect();
        assert_eq!(train.len(), 40);
        let stats = crate::catalog::compute_stats(&manifest, Split::Train, None).unwrap();
        for class in ["Normal", "A", "B", "C"] {
            assert_eq!(stats.count(class), 10);
        }
        // Derived validation counts: ceil(10/5) = 2 per class.
        let val: Vec<_> = manifest.split_records(Split::Val).collect();
        assert_eq!(val.len(), 8);
    }

    #[test]
    fn image_size_floor_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog4();
        let c = counts(&[("A", 1)]);
        assert!(generate_synthetic(&cat, &c, 8, 1, dir.path()).is_err());
    }

    #[test]
    fn quadrants_cycle_by_catalog_index() {
        let cat = catalog4();
        assert_eq!(class_quadrant(&cat, "Normal").unwrap(), 0);
        assert_eq!(class_quadrant(&cat, "A").unwrap(), 1);
        assert_eq!(class_quadrant(&cat, "B").unwrap(), 2);
        assert_eq!(class_quadrant(&cat, "C").unwrap(), 3);
        assert!(class_quadrant(&cat, "nope").is_err());
    }

    #[test]
    fn pattern_mass_stays_in_quadrant() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog4();
        let c = counts(&[("B", 6)]);
        generate_synthetic(&cat, &c, 32, 5, dir.path()).unwrap();
        // Class B is quadrant 2 (bottom-left). Bright pixels must sit there.
        for idx in 0..6 {
            let p = dir
                .path()
                .join("train/B")
                .join(format!("img_{idx:05}.png"));
            let img = image::open(&p).unwrap().to_rgb8();
            for (x, y, pix) in img.enumerate_pixels() {
                let bright = pix.0.iter().any(|&v| v > 80);
                if bright {
                    assert!(x < 16 && y >= 16, "bright pixel outside quadrant at {x},{y}");
                }
            }
        }
    }
}
