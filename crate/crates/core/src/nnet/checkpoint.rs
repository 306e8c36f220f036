//! JSON checkpoint container.
//!
//! ```json
//! { "format_version": 1, "kind": "sidenet", "layer_dims": [...],
//!   "feature_config": { "role": "sidenet", "state_dim": 2, "n_freq": 4 },
//!   "layers": [ { "weight": [...], "bias": [...] }, ... ],
//!   "crc32": 123456789 }
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so a load restores
//! every parameter bit for bit. `crc32` covers the parameter block: all weights
//! and biases in layer order, each as little-endian IEEE-754 bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dense, FeatureConfig, MlpModel, TensorBuffer};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    kind: String,
    layer_dims: Vec<usize>,
    feature_config: FeatureConfig,
    layers: Vec<LayerRecord>,
    crc32: u32,
}

fn parameter_crc(params: &[f64]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for p in params {
        hasher.update(&p.to_le_bytes());
    }
    hasher.finalize()
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        kind: model.features().role.tag().to_string(),
        layer_dims: model.layer_dims().to_vec(),
        feature_config: model.features(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerRecord {
                weight: l.weight.data().to_vec(),
                bias: l.bias.data().to_vec(),
            })
            .collect(),
        crc32: parameter_crc(&model.flatten_parameters()),
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| bad(format!("parse error: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| bad("missing format_version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile =
        serde_json::from_value(value).map_err(|e| bad(format!("schema error: {e}")))?;
    if file.kind != file.feature_config.role.tag() {
        return Err(bad(format!(
            "kind `{}` disagrees with feature role `{}`",
            file.kind,
            file.feature_config.role.tag()
        )));
    }
    if file.layer_dims.len() < 2 || file.layers.len() != file.layer_dims.len() - 1 {
        return Err(bad("layer list does not match layer_dims".into()));
    }

    let mut layers = Vec::with_capacity(file.layers.len());
    for (rec, w) in file.layers.into_iter().zip(file.layer_dims.windows(2)) {
        layers.push(Dense {
            weight: TensorBuffer::new(vec![w[1], w[0]], rec.weight).map_err(|e| bad(e.to_string()))?,
            bias: TensorBuffer::new(vec![w[1]], rec.bias).map_err(|e| bad(e.to_string()))?,
        });
    }
    let model = MlpModel::from_parts(file.layer_dims, layers, file.feature_config)
        .map_err(|e| bad(e.to_string()))?;
    let computed = parameter_crc(&model.flatten_parameters());
    if computed != file.crc32 {
        return Err(Error::CheckpointChecksum {
            path: path.to_path_buf(),
            stored: file.crc32,
            computed,
        });
    }
    Ok(model)
}
