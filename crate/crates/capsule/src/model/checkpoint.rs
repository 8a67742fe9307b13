//! Versioned checkpoint files.
//!
//! Layout: 8-byte magic, u32 format version, u64 JSON header length, JSON
//! header (spec, class names, producing stage, parameter/buffer manifest),
//! then raw little-endian f32 data in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::error::{CapsuleError, Result};

use super::{build_model, Backbone, ModelSpec, TrainedModel};

const MAGIC: &[u8; 8] = b"CAPSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    class_names: Vec<String>,
    stage_index: usize,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
}

fn buffer_name(gamma_name: &str, which: &str) -> String {
    let base = gamma_name.strip_suffix(".gamma").unwrap_or(gamma_name);
    format!("{base}.{which}")
}

fn named_buffers(model: &TrainedModel) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    let bns = match &model.backbone {
        Backbone::Hybrid { cnn, .. } | Backbone::Cnn { cnn } => cnn.stack.batch_norms(),
    };
    for bn in bns {
        out.push((
            buffer_name(&bn.gamma.name, "running_mean"),
            bn.running_mean.to_vec(),
        ));
        out.push((
            buffer_name(&bn.gamma.name, "running_var"),
            bn.running_var.to_vec(),
        ));
    }
    out
}

fn set_buffer(model: &mut TrainedModel, name: &str, data: &[f32]) -> bool {
    let bns = match &mut model.backbone {
        Backbone::Hybrid { cnn, .. } | Backbone::Cnn { cnn } => cnn.stack.batch_norms_mut(),
    };
    for bn in bns {
        if buffer_name(&bn.gamma.name, "running_mean") == name {
            bn.running_mean = ndarray::Array1::from_vec(data.to_vec());
            return true;
        }
        if buffer_name(&bn.gamma.name, "running_var") == name {
            bn.running_var = ndarray::Array1::from_vec(data.to_vec());
            return true;
        }
    }
    false
}

pub fn save(model: &TrainedModel, stage_index: usize, path: &Path) -> Result<()> {
    let params = model.params();
    let buffers = named_buffers(model);
    let header = Header {
        spec: model.spec.clone(),
        class_names: model.class_names.clone(),
        stage_index,
        params: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        buffers: buffers
            .iter()
            .map(|(n, d)| TensorEntry {
                name: n.clone(),
                shape: vec![d.len()],
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CapsuleError::Model(format!("header: {e}")))?;

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CapsuleError::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| CapsuleError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| CapsuleError::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_json).map_err(io_err)?;
    for p in &params {
        for v in p.value.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    for (_, data) in &buffers {
        for v in data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(TrainedModel, usize)> {
    let file = std::fs::File::open(path).map_err(|e| CapsuleError::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let io_err = |e: std::io::Error| CapsuleError::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(CapsuleError::Model(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(io_err)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(CapsuleError::Model(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8).map_err(io_err)?;
    let hlen = u64::from_le_bytes(l8) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&hbuf)
        .map_err(|e| CapsuleError::Model(format!("bad checkpoint header: {e}")))?;

    // Pretrained lookup is irrelevant here: every tensor gets overwritten.
    let mut spec = header.spec.clone();
    let was_pretrained = spec.pretrained;
    spec.pretrained = false;
    let mut model = build_model(&spec, &header.class_names, 0)?;
    model.spec.pretrained = was_pretrained;

    let mut read_tensor = |n_elems: usize| -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n_elems * 4];
        r.read_exact(&mut bytes).map_err(io_err)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };

    let mut loaded: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        loaded.push((e.name.clone(), e.shape.clone(), read_tensor(n)?));
    }
    let mut buffer_data: Vec<(String, Vec<f32>)> = Vec::new();
    for e in &header.buffers {
        let n: usize = e.shape.iter().product();
        buffer_data.push((e.name.clone(), read_tensor(n)?));
    }

    {
        let mut params = model.params_mut();
        for (name, shape, data) in &loaded {
            let p = params
                .iter_mut()
                .find(|p| &p.name == name)
                .ok_or_else(|| CapsuleError::Model(format!("checkpoint tensor {name} not in model")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(CapsuleError::Model(format!(
                    "shape mismatch for {name}: checkpoint {:?} vs model {:?}",
                    shape,
                    p.value.shape()
                )));
            }
            p.value = ndarray::ArrayD::from_shape_vec(IxDyn(shape), data.clone()).unwrap();
        }
        if params.len() != loaded.len() {
            return Err(CapsuleError::Model(format!(
                "checkpoint has {} tensors but the model has {}",
                loaded.len(),
                params.len()
            )));
        }
    }
    for (name, data) in &buffer_data {
        if !set_buffer(&mut model, name, data) {
            return Err(CapsuleError::Model(format!(
                "checkpoint buffer {name} not in model"
            )));
        }
    }
    Ok((model, header.stage_index))
}

/// Best-effort load of backbone weights for `spec.pretrained` models from
/// `$CAPSULE_PRETRAINED_DIR/<architecture>.ckpt`. Missing files fall back to
/// the seeded random initialization.
pub fn try_load_pretrained(model: &mut TrainedModel) -> bool {
    let dir = std::env::var("CAPSULE_PRETRAINED_DIR").unwrap_or_else(|_| "pretrained".into());
    let path = std::path::Path::new(&dir).join(format!("{}.ckpt", model.spec.architecture));
    if !path.is_file() {
        return false;
    }
    match load(&path) {
        Ok((source, _)) => {
            let source_params: Vec<(String, ndarray::ArrayD<f32>)> = source
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect();
            let mut copied = 0usize;
            for p in model.params_mut() {
                if !(p.name.starts_with("cnn.") || p.name.starts_with("vit.")) {
                    continue;
                }
                if let Some((_, v)) = source_params
                    .iter()
                    .find(|(n, v)| n == &p.name && v.shape() == p.value.shape())
                {
                    p.value = v.clone();
                    copied += 1;
                }
            }
            for (name, data) in named_buffers(&source) {
                set_buffer(model, &name, &data);
            }
            copied > 0
        }
        Err(err) => {
            eprintln!(
                "warning: could not load pretrained weights from {}: {err}",
                path.display()
            );
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelSpec};
    use ndarray::Array4;

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::new(Architecture::TinyHybrid, 3);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut model = build_model(&spec, &names, 42).unwrap();
        let x = Array4::from_shape_fn((2, 3, 32, 32), |(a, b, i, j)| {
            ((a * 3 + b * 5 + i * 7 + j) as f32 * 0.01).sin()
        });
        let before = model.forward(&x, false).unwrap();

        let path = dir.path().join("m.ckpt");
        save(&model, 2, &path).unwrap();
        let (mut loaded, stage) = load(&path).unwrap();
        assert_eq!(stage, 2);
        assert_eq!(loaded.class_names, names);
        let after = loaded.forward(&x, false).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn rejects_non_checkpoint_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load(&path).is_err());
    }
}
