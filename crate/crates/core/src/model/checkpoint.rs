use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::container;
use crate::error::{Error, Result};

/// Serializes parameters at 32-bit precision; the manifest carries the
/// model configuration.
pub fn encode_checkpoint(params: &ModelParams, config: &ModelConfig) -> Vec<u8> {
    let meta = serde_json::json!({
        "kind": "checkpoint",
        "config": config,
    });
    container::encode(&meta, &params.named_tensors())
}

pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, path: &Path) -> Result<()> {
    container::write_atomic(path, &encode_checkpoint(params, config))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, ModelConfig)> {
    let c = container::decode(bytes)?;
    if c.meta.get("kind").and_then(|k| k.as_str()) != Some("checkpoint") {
        return Err(Error::Format("container is not a checkpoint".into()));
    }
    let config: ModelConfig = serde_json::from_value(c.meta["config"].clone())
        .map_err(|e| Error::Format(format!("checkpoint config unreadable: {e}")))?;
    config.validate()?;
    // Use a fresh initialization as the layout template, then overwrite
    // every tensor by name.
    let mut params = ModelParams::init(&config, 0)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != c.tensors.len() {
        return Err(Error::Corruption(format!(
            "checkpoint holds {} tensors, configuration implies {}",
            c.tensors.len(),
            names.len()
        )));
    }
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let t = c
            .get(name)
            .ok_or_else(|| Error::Corruption(format!("tensor {name} missing")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Corruption(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok((params, config))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and requires its configuration to equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let (params, config) = load_checkpoint(path)?;
    check_compatible(&config, expected)?;
    Ok(params)
}

pub fn check_compatible(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    if found.num_speakers() != expected.num_speakers() {
        return Err(Error::Incompatible(format!(
            "checkpoint has N = {} speakers, expected {}",
            found.num_speakers(),
            expected.num_speakers()
        )));
    }
    if found != expected {
        let a = serde_json::to_value(found).expect("config serializes");
        let b = serde_json::to_value(expected).expect("config serializes");
        let differing: Vec<String> = a
            .as_object()
            .into_iter()
            .flatten()
            .filter(|(k, v)| b.get(k.as_str()) != Some(*v))
            .map(|(k, v)| format!("{k} = {v} (expected {})", b[k.as_str()]))
            .collect();
        return Err(Error::Incompatible(differing.join(", ")));
    }
    Ok(())
}
