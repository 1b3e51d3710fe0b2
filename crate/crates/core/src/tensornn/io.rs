//! Model persistence: a JSON description plus little-endian `f32` state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::network::NetworkGraph;
use super::{NnError, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub format_version: u32,
    pub input_shape: [usize; 3],
    pub n_classes: usize,
    pub param_count: usize,
    pub state_len: usize,
    pub layers: Vec<LayerSpec>,
    /// Caller-defined provenance such as architecture and seed.
    #[serde(default)]
    pub info: serde_json::Value,
}

pub fn model_meta(net: &NetworkGraph, info: serde_json::Value) -> ModelMeta {
    ModelMeta {
        format_version: MODEL_FORMAT_VERSION,
        input_shape: net.input_shape(),
        n_classes: net.n_classes(),
        param_count: net.param_count(),
        state_len: net.state_len(),
        layers: net.specs(),
        info,
    }
}

pub fn encode_state(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

pub fn decode_state(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(NnError::Format(format!("state length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes `bin_path` (state) and `meta_path` (JSON description).
pub fn save_model(net: &NetworkGraph, info: serde_json::Value, bin_path: &Path, meta_path: &Path) -> Result<()> {
    let meta = model_meta(net, info);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| NnError::Format(e.to_string()))?;
    fs::write(meta_path, json + "\n")?;
    fs::write(bin_path, encode_state(&net.state()))?;
    Ok(())
}

pub fn load_model(bin_path: &Path, meta_path: &Path) -> Result<(NetworkGraph, ModelMeta)> {
    let text = fs::read_to_string(meta_path)?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| NnError::Format(e.to_string()))?;
    if meta.format_version != MODEL_FORMAT_VERSION {
        return Err(NnError::Format(format!("unsupported format version {}", meta.format_version)));
    }
    let mut net = NetworkGraph::new(meta.input_shape, meta.n_classes, &meta.layers)?;
    if net.param_count() != meta.param_count || net.state_len() != meta.state_len {
        return Err(NnError::Format("declared sizes do not match the layer list".into()));
    }
    let values = decode_state(&fs::read(bin_path)?)?;
    net.load_state(&values)?;
    Ok((net, meta))
}
