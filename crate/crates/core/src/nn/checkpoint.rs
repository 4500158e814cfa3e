//! `model.json` manifest plus `params.bin` (flat little-endian f64).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io;

pub const FORMAT_TAG: &str = "holdwise-checkpoint/1";
pub const MANIFEST_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    /// Model family, e.g. `dqr`, `brnn`, `kalman`.
    pub kind: String,
    pub dtype: String,
    pub seed: u64,
    pub hyper_parameters: serde_json::Value,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save(
    dir: &Path,
    kind: &str,
    seed: u64,
    hyper_parameters: serde_json::Value,
    extra: serde_json::Value,
    store: &ParamStore,
) -> Result<()> {
    io::ensure_dir(dir)?;
    let mut layers = Vec::with_capacity(store.len());
    let mut flat = Vec::with_capacity(store.numel());
    for (_, name, t) in store.iter() {
        layers.push(LayerEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: flat.len(),
            len: t.len(),
        });
        flat.extend_from_slice(t.data());
    }
    let manifest = CheckpointManifest {
        format: FORMAT_TAG.to_string(),
        kind: kind.to_string(),
        dtype: "f64le".to_string(),
        seed,
        hyper_parameters,
        layers,
        extra,
    };
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    io::write_f64_le(&dir.join(PARAMS_FILE), &flat)
}

pub fn load(dir: &Path) -> Result<(CheckpointManifest, ParamStore)> {
    let manifest: CheckpointManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::invalid(format!(
            "unsupported checkpoint format `{}` (expected `{FORMAT_TAG}`)",
            manifest.format
        )));
    }
    let flat = io::read_f64_le(&dir.join(PARAMS_FILE))?;
    let mut store = ParamStore::new();
    for layer in &manifest.layers {
        let end = layer.offset + layer.len;
        if end > flat.len() {
            return Err(Error::invalid(format!("checkpoint truncated at layer `{}`", layer.name)));
        }
        store.add(
            layer.name.clone(),
            Tensor::new(layer.shape.clone(), flat[layer.offset..end].to_vec())?,
        );
    }
    Ok((manifest, store))
}

/// Reads the `kind` field without loading parameters.
pub fn peek_kind(dir: &Path) -> Result<String> {
    let manifest: CheckpointManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    Ok(manifest.kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_parameters_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(vec![2, 2], vec![1.0, -2.5, 1e-300, 3.0]).unwrap());
        store.add("b", Tensor::scalar(std::f64::consts::PI));
        save(dir.path(), "test", 7, serde_json::json!({"h": 3}), serde_json::Value::Null, &store).unwrap();
        let (manifest, loaded) = load(dir.path()).unwrap();
        assert_eq!(manifest.seed, 7);
        assert_eq!(manifest.layers[1].offset, 4);
        assert_eq!(loaded, store);
    }

    #[test]
    fn rejects_foreign_format_tag() {
        let dir = tempfile::tempdir().unwrap();
        let store = ParamStore::new();
        save(dir.path(), "x", 0, serde_json::Value::Null, serde_json::Value::Null, &store).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).unwrap().replace(FORMAT_TAG, "other/9");
        std::fs::write(&path, text).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
