//! Backbone/head models: a plain ResNet50 classifier, the full ViT-CNN
//! hybrid (ResNet34 branch + base ViT branch, concatenated features), and a
//! laptop-scale tiny hybrid with the same topology.
//!
//! The head is the only part replaced when the label space changes;
//! [`expand_head`] keeps every backbone parameter bit-identical and copies
//! output rows for retained class names.

pub mod checkpoint;
pub mod head;
pub mod resnet;
pub mod stack;
pub mod vit;

use ndarray::{Array2, Array4, s};
use serde::{Deserialize, Serialize};

use crate::error::{CapsuleError, Result};
use crate::nn::{Conv2d, Linear, MaxPool2d, Param, Relu};

pub use head::Head;
pub use stack::{CnnBranch, CnnOp, ConvStack};
pub use vit::{VitBranch, VitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Resnet50,
    VitCnnHybrid,
    TinyHybrid,
}

impl std::str::FromStr for Architecture {
    type Err = CapsuleError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet50" => Ok(Architecture::Resnet50),
            "vit_cnn_hybrid" => Ok(Architecture::VitCnnHybrid),
            "tiny_hybrid" => Ok(Architecture::TinyHybrid),
            other => Err(CapsuleError::Config(format!(
                "unsupported architecture {other:?}; expected resnet50, vit_cnn_hybrid or tiny_hybrid"
            ))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Architecture::Resnet50 => "resnet50",
            Architecture::VitCnnHybrid => "vit_cnn_hybrid",
            Architecture::TinyHybrid => "tiny_hybrid",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    Linear,
    TwoLayer { hidden: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub num_classes: usize,
    /// (cnn_dim, vit_dim); vit_dim is 0 for the pure CNN model.
    pub feature_dims: (usize, usize),
    pub pretrained: bool,
    pub input_size: usize,
    pub head: HeadKind,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, num_classes: usize) -> Self {
        let (feature_dims, input_size) = match architecture {
            Architecture::Resnet50 => ((resnet::RESNET50_DIM, 0), 224),
            Architecture::VitCnnHybrid => ((resnet::RESNET34_DIM, 768), 224),
            Architecture::TinyHybrid => ((TINY_CNN_DIM, 64), 32),
        };
        ModelSpec {
            architecture,
            num_classes,
            feature_dims,
            pretrained: false,
            input_size,
            head: HeadKind::Linear,
        }
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn with_pretrained(mut self, pretrained: bool) -> Self {
        self.pretrained = pretrained;
        self
    }

    /// Width of the concatenated feature vector entering the head.
    pub fn head_input_dim(&self) -> usize {
        self.feature_dims.0 + self.feature_dims.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CapsuleError::Model(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        let patch = match self.architecture {
            Architecture::TinyHybrid => 4,
            Architecture::VitCnnHybrid => 16,
            Architecture::Resnet50 => 32,
        };
        if self.input_size == 0 || self.input_size % patch != 0 {
            return Err(CapsuleError::Model(format!(
                "input_size {} must be a positive multiple of {patch} for {}",
                self.input_size, self.architecture
            )));
        }
        if self.architecture == Architecture::TinyHybrid
            && !(32..=64).contains(&self.input_size)
        {
            return Err(CapsuleError::Model(format!(
                "tiny_hybrid input_size must be in 32..=64, got {}",
                self.input_size
            )));
        }
        Ok(())
    }
}

pub const TINY_CNN_DIM: usize = 64;

fn tiny_cnn_stack(name: &str, seed: u64) -> ConvStack {
    ConvStack::new(vec![
        CnnOp::Conv(Conv2d::new(&format!("{name}.conv0"), 3, 16, 3, 1, 1, seed)),
        CnnOp::Relu(Relu::new()),
        CnnOp::MaxPool(MaxPool2d::new(2, 2, 0)),
        CnnOp::Conv(Conv2d::new(&format!("{name}.conv1"), 16, 32, 3, 1, 1, seed)),
        CnnOp::Relu(Relu::new()),
        CnnOp::MaxPool(MaxPool2d::new(2, 2, 0)),
        CnnOp::Conv(Conv2d::new(&format!("{name}.conv2"), 32, TINY_CNN_DIM, 3, 1, 1, seed)),
        CnnOp::Relu(Relu::new()),
    ])
}

#[derive(Debug, Clone)]
pub enum Backbone {
    /// CNN branch and ViT branch fused by feature concatenation.
    Hybrid { cnn: CnnBranch, vit: VitBranch },
    /// CNN branch only.
    Cnn { cnn: CnnBranch },
}

impl Backbone {
    pub fn cnn(&self) -> &CnnBranch {
        match self {
            Backbone::Hybrid { cnn, .. } | Backbone::Cnn { cnn } => cnn,
        }
    }

    pub fn cnn_mut(&mut self) -> &mut CnnBranch {
        match self {
            Backbone::Hybrid { cnn, .. } | Backbone::Cnn { cnn } => cnn,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Backbone::Hybrid { cnn, vit } => {
                let mut p = cnn.stack.params_mut();
                p.extend(vit.params_mut());
                p
            }
            Backbone::Cnn { cnn } => cnn.stack.params_mut(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Backbone::Hybrid { cnn, vit } => {
                let mut p = cnn.stack.params();
                p.extend(vit.params());
                p
            }
            Backbone::Cnn { cnn } => cnn.stack.params(),
        }
    }
}

/// A model with separable backbone and classification head plus the ordered
/// class names matching the head outputs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub class_names: Vec<String>,
    pub backbone: Backbone,
    pub head: Head,
}

pub fn build_model(spec: &ModelSpec, class_names: &[String], seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    if class_names.len() != spec.num_classes {
        return Err(CapsuleError::Model(format!(
            "spec expects {} classes but {} names were given",
            spec.num_classes,
            class_names.len()
        )));
    }
    check_unique(class_names)?;

    let backbone = match spec.architecture {
        Architecture::TinyHybrid => Backbone::Hybrid {
            cnn: CnnBranch::new(tiny_cnn_stack("cnn", seed), TINY_CNN_DIM),
            vit: VitBranch::new("vit", VitConfig::tiny(spec.input_size), seed),
        },
        Architecture::VitCnnHybrid => Backbone::Hybrid {
            cnn: CnnBranch::new(resnet::resnet34_stack("cnn", seed), resnet::RESNET34_DIM),
            vit: VitBranch::new("vit", VitConfig::base(spec.input_size), seed),
        },
        Architecture::Resnet50 => Backbone::Cnn {
            cnn: CnnBranch::new(resnet::resnet50_stack("cnn", seed), resnet::RESNET50_DIM),
        },
    };

    let head = match spec.head {
        HeadKind::Linear => Head::linear(spec.head_input_dim(), spec.num_classes, seed),
        HeadKind::TwoLayer { hidden } => {
            Head::two_layer(spec.head_input_dim(), hidden, spec.num_classes, seed)
        }
    };

    let mut model = TrainedModel {
        spec: spec.clone(),
        class_names: class_names.to_vec(),
        backbone,
        head,
    };
    if spec.pretrained {
        checkpoint::try_load_pretrained(&mut model);
    }
    Ok(model)
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(CapsuleError::Model(format!("duplicate class name {n:?}")));
        }
    }
    Ok(())
}

impl TrainedModel {
    fn check_input(&self, x: &Array4<f32>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 || h != self.spec.input_size || w != self.spec.input_size {
            return Err(CapsuleError::Model(format!(
                "input batch is {c}x{h}x{w} but the model expects 3x{0}x{0}",
                self.spec.input_size
            )));
        }
        Ok(())
    }

    /// Pre-head features: pooled CNN features and, for hybrids, the ViT
    /// class-token features.
    pub fn forward_features(
        &mut self,
        x: &Array4<f32>,
        train: bool,
    ) -> Result<(Array2<f32>, Option<Array2<f32>>)> {
        self.check_input(x)?;
        match &mut self.backbone {
            Backbone::Hybrid { cnn, vit } => {
                let cf = cnn.forward(x, train);
                let vf = vit.forward(x, train);
                Ok((cf, Some(vf)))
            }
            Backbone::Cnn { cnn } => Ok((cnn.forward(x, train), None)),
        }
    }

    fn fuse(&self, cnn_f: &Array2<f32>, vit_f: Option<&Array2<f32>>) -> Array2<f32> {
        match vit_f {
            Some(vf) => {
                let n = cnn_f.dim().0;
                let d = cnn_f.dim().1 + vf.dim().1;
                let mut fused = Array2::<f32>::zeros((n, d));
                fused.slice_mut(s![.., ..cnn_f.dim().1]).assign(cnn_f);
                fused.slice_mut(s![.., cnn_f.dim().1..]).assign(vf);
                fused
            }
            None => cnn_f.clone(),
        }
    }

    /// Logits of shape (batch, num_classes).
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Result<Array2<f32>> {
        let (cf, vf) = self.forward_features(x, train)?;
        let fused = self.fuse(&cf, vf.as_ref());
        Ok(self.head.forward(&fused))
    }

    /// Backward from logit gradients through head and both branches.
    /// Call only after a `forward` in the same mode.
    pub fn backward(&mut self, dlogits: &Array2<f32>) {
        let dfused = self.head.backward(dlogits);
        match &mut self.backbone {
            Backbone::Hybrid { cnn, vit } => {
                let cd = cnn.out_dim;
                let dcnn = dfused.slice(s![.., ..cd]).to_owned();
                let dvit = dfused.slice(s![.., cd..]).to_owned();
                cnn.backward(&dcnn);
                vit.backward(&dvit);
            }
            Backbone::Cnn { cnn } => cnn.backward(&dfused),
        }
    }

    /// Eval-mode forward that also captures the activation of the CNN-branch
    /// op at `layer` (used for heatmap extraction).
    pub fn forward_with_activation(
        &mut self,
        x: &Array4<f32>,
        layer: usize,
    ) -> Result<(Array2<f32>, Array4<f32>)> {
        self.check_input(x)?;
        let n_ops = self.backbone.cnn().stack.len();
        if layer >= n_ops {
            return Err(CapsuleError::Explain(format!(
                "layer index {layer} out of range; the CNN branch has {n_ops} ops"
            )));
        }
        let (cf, act, vf) = match &mut self.backbone {
            Backbone::Hybrid { cnn, vit } => {
                let (cf, act) = cnn.forward_capture(x, layer);
                let vf = vit.forward(x, false);
                (cf, act, Some(vf))
            }
            Backbone::Cnn { cnn } => {
                let (cf, act) = cnn.forward_capture(x, layer);
                (cf, act, None)
            }
        };
        let fused = self.fuse(&cf, vf.as_ref());
        Ok((self.head.forward(&fused), act))
    }

    /// Gradient of the selected logits w.r.t. the activation captured by
    /// [`forward_with_activation`]. Only the CNN branch is traversed.
    pub fn backward_to_activation(&mut self, dlogits: &Array2<f32>, layer: usize) -> Array4<f32> {
        let dfused = self.head.backward(dlogits);
        match &mut self.backbone {
            Backbone::Hybrid { cnn, .. } => {
                let cd = cnn.out_dim;
                let dcnn = dfused.slice(s![.., ..cd]).to_owned();
                cnn.backward_to(&dcnn, layer)
            }
            Backbone::Cnn { cnn } => cnn.backward_to(&dfused, layer),
        }
    }

    /// Index of the default heatmap target: the last spatial op.
    pub fn last_conv_layer(&self) -> usize {
        self.backbone.cnn().last_op_index()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CapsuleError::UnknownClass {
                name: name.to_string(),
                valid: self.class_names.clone(),
            })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.head.params());
        p
    }

    pub fn n_parameters(&self) -> usize {
        self.params().iter().map(|p| p.n_elements()).sum()
    }
}

/// Resize the classification head to a new ordered label space, retaining
/// the backbone untouched. With `copy_overlap`, output rows (weights and
/// bias) of class names present in both label spaces are copied, so their
/// logits are unchanged on any input for a linear output layer. New rows are
/// initialized from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) streams keyed by
/// (seed, class name).
pub fn expand_head(
    model: TrainedModel,
    new_class_names: &[String],
    copy_overlap: bool,
    seed: u64,
) -> Result<TrainedModel> {
    check_unique(new_class_names)?;
    let overlap: Vec<&String> = new_class_names
        .iter()
        .filter(|n| model.class_names.contains(n))
        .collect();
    if copy_overlap && overlap.is_empty() {
        return Err(CapsuleError::Model(
            "copy_overlap requested but the old and new label spaces share no class".into(),
        ));
    }

    let TrainedModel {
        mut spec,
        class_names: old_names,
        backbone,
        head,
    } = model;

    let in_dim = head.out_in_dim();
    let old_out = head.output_layer();
    let k_new = new_class_names.len();
    let bound = 1.0 / (in_dim as f32).sqrt();

    let mut new_out = Linear::new("head.out", in_dim, k_new, seed);
    for (row, name) in new_class_names.iter().enumerate() {
        let copied = copy_overlap
            .then(|| old_names.iter().position(|o| o == name))
            .flatten();
        match copied {
            Some(old_row) => {
                for col in 0..in_dim {
                    new_out.weight.value[[row, col]] = old_out.weight.value[[old_row, col]];
                }
                new_out.bias.value[[row]] = old_out.bias.value[[old_row]];
            }
            None => {
                let fresh = Param::uniform(
                    format!("head.row.{name}"),
                    &[in_dim + 1],
                    bound,
                    seed,
                );
                for col in 0..in_dim {
                    new_out.weight.value[[row, col]] = fresh.value[[col]];
                }
                new_out.bias.value[[row]] = fresh.value[[in_dim]];
            }
        }
    }

    spec.num_classes = k_new;
    Ok(TrainedModel {
        spec,
        class_names: new_class_names.to_vec(),
        backbone,
        head: head.with_output_layer(new_out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn probe_batch(n: usize, size: usize, salt: u64) -> Array4<f32> {
        Array4::from_shape_fn((n, 3, size, size), |(a, b, i, j)| {
            let h = crate::nn::stable_hash(&[
                &salt.to_le_bytes(),
                &(a as u64).to_le_bytes(),
                &(b as u64).to_le_bytes(),
                &(i as u64).to_le_bytes(),
                &(j as u64).to_le_bytes(),
            ]);
            (h % 1000) as f32 / 1000.0
        })
    }

    #[test]
    fn tiny_hybrid_logit_shape() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
        let mut m = build_model(&spec, &names(&["Normal", "Abnormal"]), 7).unwrap();
        let x = probe_batch(4, 32, 1);
        let logits = m.forward(&x, false).unwrap();
        assert_eq!(logits.dim(), (4, 2));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 3);
        let mut m = build_model(&spec, &names(&["a", "b", "c"]), 9).unwrap();
        let x = probe_batch(2, 32, 2);
        let l1 = m.forward(&x, false).unwrap();
        let l2 = m.forward(&x, false).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn features_are_exact_head_inputs() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 3);
        let mut m = build_model(&spec, &names(&["a", "b", "c"]), 11).unwrap();
        let x = probe_batch(2, 32, 3);
        let (cf, vf) = m.forward_features(&x, false).unwrap();
        let vf = vf.unwrap();
        assert_eq!(cf.dim(), (2, TINY_CNN_DIM));
        assert_eq!(vf.dim(), (2, 64));
        let fused = m.fuse(&cf, Some(&vf));
        let by_head = m.head.apply(&fused);
        let direct = m.forward(&x, false).unwrap();
        assert_eq!(by_head, direct);
    }

    #[test]
    fn zero_input_finite() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
        let mut m = build_model(&spec, &names(&["a", "b"]), 5).unwrap();
        let x = Array4::zeros((1, 3, 32, 32));
        let (cf, vf) = m.forward_features(&x, false).unwrap();
        assert!(cf.iter().all(|v| v.is_finite()));
        assert!(vf.unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
        let mut m = build_model(&spec, &names(&["a", "b"]), 5).unwrap();
        let x = Array4::zeros((1, 3, 16, 16));
        assert!(m.forward(&x, false).is_err());
    }

    #[test]
    fn unsupported_architecture_string_is_rejected() {
        assert!("resnet18".parse::<Architecture>().is_err());
    }

    #[test]
    fn expand_head_preserves_backbone_and_overlap_logits() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
        let m = build_model(&spec, &names(&["Normal", "Abnormal"]), 13).unwrap();
        let x = probe_batch(3, 32, 4);

        let mut before = m.clone();
        let logits_before = before.forward(&x, false).unwrap();
        let (cf_before, vf_before) = before.forward_features(&x, false).unwrap();

        let mut expanded = expand_head(m, &names(&["Normal", "A", "Abnormal-rest"]), true, 99).unwrap();
        let logits_after = expanded.forward(&x, false).unwrap();
        let (cf_after, vf_after) = expanded.forward_features(&x, false).unwrap();

        assert_eq!(cf_before, cf_after);
        assert_eq!(vf_before.unwrap(), vf_after.unwrap());
        // "Normal" kept row 0 in both spaces: logits exactly equal.
        for i in 0..3 {
            assert_eq!(logits_before[[i, 0]], logits_after[[i, 0]]);
        }
        assert_eq!(expanded.class_names.len(), 3);
        assert_eq!(expanded.head.num_classes(), 3);
    }

    #[test]
    fn expand_to_same_labels_is_identity() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
        let m = build_model(&spec, &names(&["Normal", "Abnormal"]), 13).unwrap();
        let x = probe_batch(2, 32, 8);
        let mut before = m.clone();
        let l1 = before.forward(&x, false).unwrap();
        let mut same = expand_head(m, &names(&["Normal", "Abnormal"]), true, 1234).unwrap();
        let l2 = same.forward(&x, false).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn expand_rejects_duplicates_and_empty_overlap() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
        let m = build_model(&spec, &names(&["Normal", "Abnormal"]), 13).unwrap();
        assert!(expand_head(m.clone(), &names(&["x", "x"]), false, 1).is_err());
        assert!(expand_head(m, &names(&["p", "q"]), true, 1).is_err());
    }

    #[test]
    fn head_finite_difference_linearity() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 3);
        let mut m = build_model(&spec, &names(&["a", "b", "c"]), 21).unwrap();
        let x = probe_batch(1, 32, 5);
        let (cf, vf) = m.forward_features(&x, false).unwrap();
        let fused = m.fuse(&cf, vf.as_ref());
        let logits = m.head.apply(&fused);

        let eps = 1e-2f32;
        let (class, col) = (1usize, 7usize);
        let out = m.head.output_layer_mut();
        out.weight.value[[class, col]] += eps;
        let logits2 = m.head.apply(&fused);
        let delta = logits2[[0, class]] - logits[[0, class]];
        let expected = eps * fused[[0, col]];
        assert!(
            (delta - expected).abs() <= 1e-4 * expected.abs().max(1e-6),
            "delta {delta} expected {expected}"
        );
    }

    #[test]
    fn hybrid_fusion_vit_branch_feeds_head() {
        let spec = ModelSpec::new(Architecture::TinyHybrid, 2);
        let mut m = build_model(&spec, &names(&["a", "b"]), 31).unwrap();
        let x = probe_batch(1, 32, 6);
        let (cf, vf) = m.forward_features(&x, false).unwrap();
        let with_vit = m.head.apply(&m.fuse(&cf, vf.as_ref()));
        let zeroed = Array2::zeros(vf.as_ref().unwrap().raw_dim());
        let without_vit = m.head.apply(&m.fuse(&cf, Some(&zeroed)));
        assert_ne!(with_vit, without_vit);
    }
}
