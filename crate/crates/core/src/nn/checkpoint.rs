//! On-disk model format: a JSON manifest plus one raw little-endian `f32`
//! blob per weight tensor.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/layer{i}_weight.f32
//! <dir>/layer{i}_bias.f32
//! ```
//!
//! Weights are held as `f64` in memory and rounded to `f32` on save.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec};
use super::sequential::{param_shapes, Sequential};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "conceptcause-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub layer: usize,
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub hyperparameters: serde_json::Value,
}

pub fn save_checkpoint(dir: &Path, model: &Sequential, seed: u64, hyperparameters: serde_json::Value) -> Result<()> {
    io::ensure_dir(dir)?;
    let mut tensors = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        for (name, t) in ["weight", "bias"].into_iter().zip(layer.params()) {
            let file = format!("layer{i}_{name}.f32");
            io::write_bytes(&dir.join(&file), &io::f32_le_bytes(t.data()))?;
            tensors.push(TensorEntry {
                layer: i,
                name: name.to_string(),
                file,
                shape: t.shape().to_vec(),
            });
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        input_shape: model.input_shape().to_vec(),
        layers: model.specs(),
        tensors,
        seed,
        hyperparameters,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Sequential, CheckpointManifest)> {
    let manifest: CheckpointManifest = io::read_json(&dir.join("manifest.json"))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Validation(format!(
            "unsupported checkpoint format `{}`",
            manifest.format
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, spec) in manifest.layers.iter().enumerate() {
        let shapes = param_shapes(spec);
        let mut loaded = Vec::new();
        for (name, shape) in ["weight", "bias"].into_iter().zip(shapes) {
            let entry = manifest
                .tensors
                .iter()
                .find(|t| t.layer == i && t.name == name)
                .ok_or_else(|| Error::Validation(format!("layer {i} missing {name} tensor")))?;
            if entry.shape != shape {
                return Err(Error::Validation(format!(
                    "layer {i} {name}: manifest shape {:?}, architecture needs {shape:?}",
                    entry.shape
                )));
            }
            let values = io::f32_le_values(&io::read_bytes(&dir.join(&entry.file))?)?;
            loaded.push(Tensor::new(shape, values)?);
        }
        let mut layer = Layer::zeroed(spec);
        for (slot, t) in layer.params_mut().into_iter().zip(loaded) {
            *slot = t;
        }
        layers.push(layer);
    }
    let model = Sequential::new(manifest.input_shape.clone(), layers)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn round_trip_matches_f32_quantized_weights() {
        let specs = vec![
            LayerSpec::conv_same(1, 3, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { inputs: 3, outputs: 2 },
            LayerSpec::Softmax,
        ];
        let model = Sequential::from_specs(vec![1, 4, 4], &specs, &mut SeedStream::new(3).rng("init")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, 3, serde_json::json!({"lr": 0.1})).unwrap();
        let (loaded, manifest) = load_checkpoint(dir.path()).unwrap();
        let mut expected = model.clone();
        expected.quantize_f32();
        assert_eq!(loaded, expected);
        assert_eq!(manifest.seed, 3);
        assert_eq!(manifest.layers, specs);
        let blob = std::fs::read(dir.path().join("layer0_weight.f32")).unwrap();
        assert_eq!(blob.len(), 3 * 9 * 4);
    }
}
