//! Checkpoint directories: `manifest.json` plus one little-endian f32 blob per tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, MicroformerModel, ModelConfig, Scalar};
use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_atomic};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub step: u64,
    pub seed: u64,
}

/// Writes the checkpoint and returns the sha256 over manifest and blobs, in manifest order.
pub fn save_checkpoint<T: Scalar>(model: &MicroformerModel<T>, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut blobs = Vec::new();
    for spec in model.layout().specs() {
        let file = format!("{}.bin", spec.name);
        let mut bytes = Vec::with_capacity(spec.len() * 4);
        for p in &model.params()[spec.range()] {
            let v = p.to_f32().expect("finite parameter");
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(&dir.join(&file), &bytes)?;
        blobs.push(bytes);
        tensors.push(TensorEntry {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        config: model.config().clone(),
        tensors,
        step: model.step(),
        seed: model.config().seed,
    };
    let text = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST), &text)?;
    Ok(hash_parts(&text, &blobs))
}

fn hash_parts(manifest: &[u8], blobs: &[Vec<u8>]) -> String {
    let mut all = manifest.to_vec();
    for b in blobs {
        all.extend_from_slice(b);
    }
    sha256_hex(&all)
}

/// Loads a checkpoint; optimizer moments restart at zero. Returns the model and its hash.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(MicroformerModel<T>, String)> {
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read(&manifest_path)?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    manifest.config.validate()?;
    let layout = Layout::new(&manifest.config);
    if layout.specs().len() != manifest.tensors.len() {
        return Err(Error::format(&manifest_path, "tensor list does not match the config"));
    }
    let mut params = Vec::with_capacity(layout.total());
    let mut blobs = Vec::new();
    for (spec, entry) in layout.specs().iter().zip(&manifest.tensors) {
        if spec.name != entry.name || spec.shape != entry.shape {
            return Err(Error::format(
                &manifest_path,
                format!("tensor {} has shape {:?}, expected {} {:?}", entry.name, entry.shape, spec.name, spec.shape),
            ));
        }
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path)?;
        if bytes.len() != spec.len() * 4 {
            return Err(Error::format(&path, format!("{} bytes, expected {}", bytes.len(), spec.len() * 4)));
        }
        for c in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::format(&path, "non-finite parameter"));
            }
            params.push(T::of(v as f64));
        }
        blobs.push(bytes);
    }
    let hash = hash_parts(&text, &blobs);
    Ok((MicroformerModel::from_parts(manifest.config, params, manifest.step), hash))
}

#[cfg(test)]
mod tests {
    use super::super::init_model;
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            layers: 1,
            d_model: 8,
            mlp_hidden: 8,
            heads: 4,
            vocab: 7,
            seq_len: 5,
            ..Default::default()
        };
        let model = init_model::<f32>(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let h1 = save_checkpoint(&model, dir.path()).unwrap();
        let (back, h2) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config(), model.config());

        std::fs::write(dir.path().join("ln_f.bin"), [0u8; 3]).unwrap();
        assert!(load_checkpoint::<f32>(dir.path()).is_err());
    }
}
