//! Class catalogs, dataset manifests, and class-distribution statistics.
//!
//! A manifest is the canonical record of a dataset: one row per image with
//! its class, split and provenance. Manifests round-trip through a fixed
//! CSV layout (`image_path,class_name,split,origin,source_path`) and can be
//! ingested either from that CSV or from a `split/class/images` directory
//! tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CapsuleError, Result};

/// Header of the manifest CSV format.
pub const MANIFEST_CSV_HEADER: [&str; 5] =
    ["image_path", "class_name", "split", "origin", "source_path"];

/// The ordered class universe plus the single class designated Normal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    classes: Vec<String>,
    normal_class: String,
}

impl ClassCatalog {
    pub fn new(classes: Vec<String>, normal_class: impl Into<String>) -> Result<Self> {
        let normal_class = normal_class.into();
        if classes.len() < 2 {
            return Err(CapsuleError::Config(
                "a catalog needs at least 2 classes".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for c in &classes {
            if c.trim().is_empty() {
                return Err(CapsuleError::Config("empty class name".into()));
            }
            if !seen.insert(c.as_str()) {
                return Err(CapsuleError::Config(format!("duplicate class name {c:?}")));
            }
        }
        if !classes.contains(&normal_class) {
            return Err(CapsuleError::Config(format!(
                "normal_class {normal_class:?} is not one of the classes"
            )));
        }
        Ok(ClassCatalog {
            classes,
            normal_class,
        })
    }

    /// Ten-class default: Normal plus nine common small-bowel findings.
    /// Override with your own catalog file when the dataset differs.
    pub fn default_vce() -> Self {
        let classes = [
            "Normal",
            "Angioectasia",
            "Bleeding",
            "Erosion",
            "Erythema",
            "Foreign Body",
            "Lymphangiectasia",
            "Polyp",
            "Ulcer",
            "Worms",
        ]
        .map(String::from)
        .to_vec();
        ClassCatalog::new(classes, "Normal").expect("default catalog is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            classes: Vec<String>,
            normal_class: String,
        }
        let bytes = std::fs::read(path).map_err(|e| CapsuleError::io(path, e))?;
        let raw: Raw = serde_json::from_slice(&bytes)
            .map_err(|e| CapsuleError::Config(format!("bad catalog file {}: {e}", path.display())))?;
        ClassCatalog::new(raw.classes, raw.normal_class)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let json = serde_json::json!({
            "classes": self.classes,
            "normal_class": self.normal_class,
        });
        std::fs::write(path, serde_json::to_string_pretty(&json).unwrap())
            .map_err(|e| CapsuleError::io(path, e))
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn normal_class(&self) -> &str {
        &self.normal_class
    }

    pub fn abnormal_classes(&self) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|c| *c != &self.normal_class)
            .map(|s| s.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.classes.iter().any(|c| c == name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CapsuleError::UnknownClass {
                name: name.to_string(),
                valid: self.classes.clone(),
            })
    }

    pub fn is_normal(&self, name: &str) -> bool {
        name == self.normal_class
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CapsuleError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(CapsuleError::Data(format!(
                "unknown split {other:?}; expected train or val"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Augmented,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Augmented => "augmented",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = CapsuleError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Origin::Original),
            "augmented" => Ok(Origin::Augmented),
            other => Err(CapsuleError::Data(format!(
                "unknown origin {other:?}; expected original or augmented"
            ))),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image in the dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub class_name: String,
    pub split: Split,
    pub origin: Origin,
    /// Path of the source image when `origin == Augmented`.
    pub source_path: Option<PathBuf>,
}

impl SampleRecord {
    pub fn original(image_path: impl Into<PathBuf>, class_name: impl Into<String>, split: Split) -> Self {
        SampleRecord {
            image_path: image_path.into(),
            class_name: class_name.into(),
            split,
            origin: Origin::Original,
            source_path: None,
        }
    }

    pub fn augmented(
        image_path: impl Into<PathBuf>,
        class_name: impl Into<String>,
        split: Split,
        source_path: impl Into<PathBuf>,
    ) -> Self {
        SampleRecord {
            image_path: image_path.into(),
            class_name: class_name.into(),
            split,
            origin: Origin::Augmented,
            source_path: Some(source_path.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    catalog: ClassCatalog,
    records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(catalog: ClassCatalog, records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen: BTreeSet<(Split, &Path)> = BTreeSet::new();
        for r in &records {
            if !catalog.contains(&r.class_name) {
                return Err(CapsuleError::UnknownClass {
                    name: r.class_name.clone(),
                    valid: catalog.classes().to_vec(),
                });
            }
            if r.origin == Origin::Augmented && r.source_path.as_deref().map_or(true, |p| p.as_os_str().is_empty()) {
                return Err(CapsuleError::Data(format!(
                    "augmented record {} is missing its source_path",
                    r.image_path.display()
                )));
            }
            if !seen.insert((r.split, r.image_path.as_path())) {
                return Err(CapsuleError::Data(format!(
                    "duplicate image path in split {}: {}",
                    r.split,
                    r.image_path.display()
                )));
            }
        }
        Ok(DatasetManifest { catalog, records })
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Copy with records in a canonical order, for order-insensitive compares.
    pub fn normalized(&self) -> DatasetManifest {
        let mut records = self.records.clone();
        records.sort();
        DatasetManifest {
            catalog: self.catalog.clone(),
            records,
        }
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(MANIFEST_CSV_HEADER).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            let image_path = path_str(&r.image_path)?;
            let source = match &r.source_path {
                Some(p) => path_str(p)?,
                None => String::new(),
            };
            w.write_record([
                image_path.as_str(),
                r.class_name.as_str(),
                r.split.as_str(),
                r.origin.as_str(),
                source.as_str(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| CapsuleError::io(path, e))
    }
}

fn path_str(p: &Path) -> Result<String> {
    p.to_str()
        .map(str::to_string)
        .ok_or_else(|| CapsuleError::Data(format!("non-UTF8 path: {}", p.display())))
}

fn csv_err(path: &Path, e: csv::Error) -> CapsuleError {
    CapsuleError::Data(format!("csv error at {}: {e}", path.display()))
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Ingest a dataset into a manifest. `root_or_csv` is either a directory in
/// `split/class/images` layout (splits `train`, `val`) or a manifest CSV.
/// All directory-discovered records carry `origin = original`.
pub fn ingest(root_or_csv: &Path, catalog: &ClassCatalog) -> Result<DatasetManifest> {
    if root_or_csv.is_dir() {
        ingest_dir(root_or_csv, catalog)
    } else if root_or_csv.is_file() {
        ingest_csv(root_or_csv, catalog)
    } else {
        Err(CapsuleError::Data(format!(
            "dataset path does not exist: {}",
            root_or_csv.display()
        )))
    }
}

fn ingest_dir(root: &Path, catalog: &ClassCatalog) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    for split in [Split::Train, Split::Val] {
        let split_dir = root.join(split.as_str());
        if !split_dir.is_dir() {
            continue;
        }
        let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(&split_dir)
            .map_err(|e| CapsuleError::io(&split_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        class_dirs.sort();
        for class_dir in class_dirs {
            let class_name = class_dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| CapsuleError::Data(format!("unreadable directory name under {}", split_dir.display())))?
                .to_string();
            if !catalog.contains(&class_name) {
                return Err(CapsuleError::UnknownClass {
                    name: class_name,
                    valid: catalog.classes().to_vec(),
                });
            }
            let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&class_dir)
                .into_iter()
                .filter_map(|e| e.ok())
                .filter(|e| e.file_type().is_file())
                .map(|e| e.into_path())
                .filter(|p| is_image_file(p))
                .collect();
            files.sort();
            for f in files {
                records.push(SampleRecord::original(f, class_name.clone(), split));
            }
        }
    }
    if records.is_empty() {
        return Err(CapsuleError::Data(format!(
            "no images found under {} (expected train/<class>/ and val/<class>/)",
            root.display()
        )));
    }
    DatasetManifest::new(catalog.clone(), records)
}

fn ingest_csv(path: &Path, catalog: &ClassCatalog) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    {
        let headers = reader.headers().map_err(|e| csv_err(path, e))?;
        let got: Vec<&str> = headers.iter().collect();
        // source_path is optional in the minimal 3-column form.
        if got.len() < 3 || got[0] != "image_path" || got[1] != "class_name" || got[2] != "split" {
            return Err(CapsuleError::Data(format!(
                "manifest csv {} must start with columns image_path,class_name,split",
                path.display()
            )));
        }
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let image_path = PathBuf::from(row.get(0).unwrap_or_default());
        let class_name = row.get(1).unwrap_or_default().to_string();
        if !catalog.contains(&class_name) {
            return Err(CapsuleError::UnknownClass {
                name: class_name,
                valid: catalog.classes().to_vec(),
            });
        }
        let split: Split = row.get(2).unwrap_or_default().parse()?;
        let origin: Origin = match row.get(3) {
            Some("") | None => Origin::Original,
            Some(s) => s.parse()?,
        };
        let source = row.get(4).filter(|s| !s.is_empty()).map(PathBuf::from);
        records.push(SampleRecord {
            image_path,
            class_name,
            split,
            origin,
            source_path: source,
        });
    }
    if records.is_empty() {
        return Err(CapsuleError::Data(format!(
            "manifest csv {} has no rows",
            path.display()
        )));
    }
    DatasetManifest::new(catalog.clone(), records)
}

/// Per-class counts for one split (optionally filtered by origin) plus the
/// catalog context needed by downstream consumers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub counts: BTreeMap<String, usize>,
    pub normal_class: String,
    pub split: Split,
    pub origin_filter: Option<Origin>,
}

impl ClassStats {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// max count / min count over classes with a positive count.
    pub fn imbalance_ratio(&self) -> f64 {
        let positive: Vec<usize> = self.counts.values().copied().filter(|&c| c > 0).collect();
        match (positive.iter().max(), positive.iter().min()) {
            (Some(&max), Some(&min)) if min > 0 => max as f64 / min as f64,
            _ => 1.0,
        }
    }

    /// Imbalance ratio with the Normal class left out.
    pub fn imbalance_ratio_abnormal(&self) -> f64 {
        let positive: Vec<usize> = self
            .counts
            .iter()
            .filter(|(c, _)| **c != self.normal_class)
            .map(|(_, &n)| n)
            .filter(|&c| c > 0)
            .collect();
        match (positive.iter().max(), positive.iter().min()) {
            (Some(&max), Some(&min)) if min > 0 => max as f64 / min as f64,
            _ => 1.0,
        }
    }

    pub fn count(&self, class: &str) -> usize {
        self.counts.get(class).copied().unwrap_or(0)
    }
}

impl fmt::Display for ClassStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "split={} origin={} total={}",
            self.split,
            self.origin_filter.map_or("any".into(), |o| o.to_string()),
            self.total()
        )?;
        for (class, count) in &self.counts {
            writeln!(f, "  {class:<20} {count}")?;
        }
        write!(f, "  imbalance ratio: {:.2}", self.imbalance_ratio())
    }
}

/// Exact per-class counts over `split`, restricted to `origin_filter` when
/// given. Every catalog class appears in the result, zero counts included.
pub fn compute_stats(
    manifest: &DatasetManifest,
    split: Split,
    origin_filter: Option<Origin>,
) -> Result<ClassStats> {
    let mut counts: BTreeMap<String, usize> = manifest
        .catalog()
        .classes()
        .iter()
        .map(|c| (c.clone(), 0))
        .collect();
    let mut matched = 0usize;
    for r in manifest.split_records(split) {
        if origin_filter.is_some_and(|o| o != r.origin) {
            continue;
        }
        *counts.get_mut(&r.class_name).expect("validated class") += 1;
        matched += 1;
    }
    if matched == 0 {
        return Err(CapsuleError::Data(format!(
            "no records in split {split} (origin filter: {:?})",
            origin_filter.map(|o| o.to_string())
        )));
    }
    Ok(ClassStats {
        counts,
        normal_class: manifest.catalog().normal_class().to_string(),
        split,
        origin_filter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_catalog() -> ClassCatalog {
        ClassCatalog::new(
            vec!["Normal".into(), "A".into(), "B".into()],
            "Normal",
        )
        .unwrap()
    }

    #[test]
    fn catalog_invariants_enforced() {
        assert!(ClassCatalog::new(vec!["x".into()], "x").is_err());
        assert!(ClassCatalog::new(vec!["x".into(), "x".into()], "x").is_err());
        assert!(ClassCatalog::new(vec!["x".into(), "y".into()], "z").is_err());
        assert_eq!(ClassCatalog::default_vce().len(), 10);
    }

    #[test]
    fn manifest_rejects_unknown_class_and_duplicates() {
        let cat = small_catalog();
        let bad = DatasetManifest::new(
            cat.clone(),
            vec![SampleRecord::original("x.png", "Wormz", Split::Train)],
        );
        match bad {
            Err(CapsuleError::UnknownClass { name, .. }) => assert_eq!(name, "Wormz"),
            other => panic!("expected UnknownClass, got {other:?}"),
        }
        let dup = DatasetManifest::new(
            cat.clone(),
            vec![
                SampleRecord::original("x.png", "A", Split::Train),
                SampleRecord::original("x.png", "A", Split::Train),
            ],
        );
        assert!(dup.is_err());
        // Same path in different splits is allowed.
        let ok = DatasetManifest::new(
            cat,
            vec![
                SampleRecord::original("x.png", "A", Split::Train),
                SampleRecord::original("x.png", "A", Split::Val),
            ],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn augmented_needs_source() {
        let cat = small_catalog();
        let rec = SampleRecord {
            image_path: "a.png".into(),
            class_name: "A".into(),
            split: Split::Train,
            origin: Origin::Augmented,
            source_path: None,
        };
        assert!(DatasetManifest::new(cat, vec![rec]).is_err());
    }

    #[test]
    fn stats_counts_and_ratio() {
        let cat = small_catalog();
        let mut records = Vec::new();
        for i in 0..6 {
            records.push(SampleRecord::original(format!("n{i}.png"), "Normal", Split::Train));
        }
        for i in 0..2 {
            records.push(SampleRecord::original(format!("a{i}.png"), "A", Split::Train));
        }
        let manifest = DatasetManifest::new(cat, records).unwrap();
        let stats = compute_stats(&manifest, Split::Train, Some(Origin::Original)).unwrap();
        assert_eq!(stats.count("Normal"), 6);
        assert_eq!(stats.count("A"), 2);
        assert_eq!(stats.count("B"), 0); // zero still reported
        assert_eq!(stats.total(), 8);
        assert!((stats.imbalance_ratio() - 3.0).abs() < 1e-12); // zero class excluded
        assert!(compute_stats(&manifest, Split::Val, None).is_err());
    }

    #[test]
    fn reported_extreme_counts_give_expected_ratio() {
        let cat = ClassCatalog::new(vec!["Normal".into(), "Worms".into()], "Normal").unwrap();
        let mut records = Vec::new();
        for i in 0..28663usize {
            records.push(SampleRecord::original(format!("n{i}.png"), "Normal", Split::Train));
        }
        for i in 0..158usize {
            records.push(SampleRecord::original(format!("w{i}.png"), "Worms", Split::Train));
        }
        let manifest = DatasetManifest::new(cat, records).unwrap();
        let stats = compute_stats(&manifest, Split::Train, None).unwrap();
        let expected = 28663.0f64 / 158.0f64;
        assert_eq!(stats.imbalance_ratio(), expected);
        assert!((stats.imbalance_ratio() - 181.41).abs() < 0.01);
    }

    #[test]
    fn equal_counts_ratio_is_one() {
        let cat = small_catalog();
        let mut records = Vec::new();
        for class in ["Normal", "A", "B"] {
            for i in 0..50 {
                records.push(SampleRecord::original(format!("{class}_{i}.png"), class, Split::Train));
            }
        }
        let manifest = DatasetManifest::new(cat, records).unwrap();
        let stats = compute_stats(&manifest, Split::Train, None).unwrap();
        assert_eq!(stats.imbalance_ratio(), 1.0);
    }

    #[test]
    fn csv_round_trip_preserves_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cat = small_catalog();
        let records = vec![
            SampleRecord::original("data/a0.png", "A", Split::Train),
            SampleRecord::original("data/n0.png", "Normal", Split::Val),
            SampleRecord::augmented("out/a0_aug0.png", "A", Split::Train, "data/a0.png"),
        ];
        let manifest = DatasetManifest::new(cat.clone(), records).unwrap();
        let csv_path = dir.path().join("manifest.csv");
        manifest.export_csv(&csv_path).unwrap();
        let back = ingest(&csv_path, &cat).unwrap();
        assert_eq!(manifest.normalized(), back.normalized());
    }

    #[test]
    fn csv_with_unknown_class_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("m.csv");
        std::fs::write(
            &csv_path,
            "image_path,class_name,split,origin,source_path\nx.png,Wormz,train,original,\n",
        )
        .unwrap();
        match ingest(&csv_path, &small_catalog()) {
            Err(CapsuleError::UnknownClass { name, .. }) => assert_eq!(name, "Wormz"),
            other => panic!("expected UnknownClass, got {other:?}"),
        }
    }

    #[test]
    fn missing_path_is_an_error() {
        let err = ingest(Path::new("/definitely/not/here"), &small_catalog());
        assert!(err.is_err());
    }
}
