//! Staged task schedules: Normal-vs-Abnormal first, then one abnormal class
//! per stage, easiest first, where easiness is the number of training images
//! available. Also remaps sample labels into each stage's label space.

use serde::{Deserialize, Serialize};

use crate::catalog::{ClassCatalog, ClassStats, DatasetManifest, SampleRecord, Split};
use crate::error::{CapsuleError, Result};

/// Binary stage-0 label for everything that is not Normal.
pub const LABEL_ABNORMAL: &str = "Abnormal";
/// Aggregate label for abnormal classes not yet introduced (stages >= 1).
pub const LABEL_REST: &str = "Abnormal-rest";

/// How records of not-yet-introduced abnormal classes are treated in
/// stages >= 1: folded into [`LABEL_REST`] or left out entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderMode {
    Aggregate,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: usize,
    /// Ordered label space the model head is trained on at this stage.
    pub label_space: Vec<String>,
    /// Class introduced at this stage; `None` for the binary stage 0.
    pub added_class: Option<String>,
    pub remainder_mode: RemainderMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub stages: Vec<Stage>,
    /// Abnormal classes sorted by descending train count (ties: catalog
    /// order); stage k (k >= 1) introduces `ordering[k - 1]`.
    pub ordering: Vec<String>,
}

impl CurriculumSchedule {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn final_stage(&self) -> &Stage {
        self.stages.last().expect("schedule has at least one stage")
    }

    pub fn describe(&self) -> String {
        let mut out = String::from("curriculum schedule:\n");
        for s in &self.stages {
            out.push_str(&format!(
                "  stage {}: labels [{}]{}\n",
                s.index,
                s.label_space.join(", "),
                s.added_class
                    .as_ref()
                    .map(|c| format!(" (+{c})"))
                    .unwrap_or_default(),
            ));
        }
        out
    }
}

/// Build the schedule from per-class train counts. Stage 0 is binary; each
/// later stage introduces the abnormal class with the most remaining images,
/// so the fewest-images class arrives last.
pub fn build_schedule(
    stats: &ClassStats,
    catalog: &ClassCatalog,
    remainder_mode: RemainderMode,
) -> Result<CurriculumSchedule> {
    let normal = catalog.normal_class().to_string();
    if !stats.counts.contains_key(&normal) {
        return Err(CapsuleError::Data(format!(
            "stats do not cover the Normal class {normal:?}"
        )));
    }
    for class in catalog.classes() {
        if !stats.counts.contains_key(class) {
            return Err(CapsuleError::Data(format!(
                "stats do not cover catalog class {class:?}"
            )));
        }
        if class == LABEL_ABNORMAL || class == LABEL_REST {
            return Err(CapsuleError::Config(format!(
                "class name {class:?} collides with a reserved stage label"
            )));
        }
    }

    // Descending count; ties resolved by catalog order.
    let mut ordering: Vec<(usize, &String)> = catalog
        .classes()
        .iter()
        .filter(|c| !catalog.is_normal(c))
        .map(|c| (catalog.index_of(c).expect("catalog class"), c))
        .collect();
    ordering.sort_by(|(ia, ca), (ib, cb)| {
        stats
            .count(cb)
            .cmp(&stats.count(ca))
            .then_with(|| ia.cmp(ib))
    });
    let ordering: Vec<String> = ordering.into_iter().map(|(_, c)| c.clone()).collect();
    if ordering.is_empty() {
        return Err(CapsuleError::Config(
            "catalog has no abnormal classes to schedule".into(),
        ));
    }

    let total = ordering.len();
    let mut stages = Vec::with_capacity(total + 1);
    stages.push(Stage {
        index: 0,
        label_space: vec![normal.clone(), LABEL_ABNORMAL.to_string()],
        added_class: None,
        remainder_mode,
    });
    for k in 1..=total {
        let mut label_space = Vec::with_capacity(k + 2);
        label_space.push(normal.clone());
        label_space.extend(ordering[..k].iter().cloned());
        let remaining = total - k;
        if remaining > 0 && remainder_mode == RemainderMode::Aggregate {
            label_space.push(LABEL_REST.to_string());
        }
        stages.push(Stage {
            index: k,
            label_space,
            added_class: Some(ordering[k - 1].clone()),
            remainder_mode,
        });
    }

    Ok(CurriculumSchedule { stages, ordering })
}

/// Stage label for a catalog class. `None` means the record is excluded
/// (drop mode, class not yet introduced).
pub fn remap_label(stage: &Stage, class_name: &str, catalog: &ClassCatalog) -> Result<Option<String>> {
    if !catalog.contains(class_name) {
        return Err(CapsuleError::UnknownClass {
            name: class_name.to_string(),
            valid: catalog.classes().to_vec(),
        });
    }
    if catalog.is_normal(class_name) {
        return Ok(Some(catalog.normal_class().to_string()));
    }
    if stage.index == 0 {
        // The binary stage aggregates regardless of mode.
        return Ok(Some(LABEL_ABNORMAL.to_string()));
    }
    if stage.label_space.iter().any(|l| l == class_name) {
        return Ok(Some(class_name.to_string()));
    }
    match stage.remainder_mode {
        RemainderMode::Aggregate => Ok(Some(LABEL_REST.to_string())),
        RemainderMode::Drop => Ok(None),
    }
}

/// A manifest view carrying stage labels.
#[derive(Debug, Clone)]
pub struct StageView {
    pub stage: Stage,
    /// (record, stage label) pairs; excluded records are absent.
    pub records: Vec<(SampleRecord, String)>,
}

impl StageView {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &(SampleRecord, String)> {
        self.records.iter().filter(move |(r, _)| r.split == split)
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.stage
            .label_space
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| CapsuleError::UnknownClass {
                name: label.to_string(),
                valid: self.stage.label_space.clone(),
            })
    }

    pub fn distinct_labels(&self) -> Vec<&str> {
        let mut seen = std::collections::BTreeSet::new();
        for (_, l) in &self.records {
            seen.insert(l.as_str());
        }
        seen.into_iter().collect()
    }
}

/// Apply the stage's label mapping to every record. In aggregate mode the
/// record count is conserved; in drop mode excluded records are absent.
pub fn stage_manifest(
    manifest: &DatasetManifest,
    stage: &Stage,
    catalog: &ClassCatalog,
) -> Result<StageView> {
    let mut records = Vec::with_capacity(manifest.len());
    for r in manifest.records() {
        if let Some(label) = remap_label(stage, &r.class_name, catalog)? {
            records.push((r.clone(), label));
        }
    }
    Ok(StageView {
        stage: stage.clone(),
        records,
    })
}
