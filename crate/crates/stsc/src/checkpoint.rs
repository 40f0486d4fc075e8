//! Checkpoint directory: `checkpoint.json` (shapes, config echo, step
//! counter) plus `params.bin`, little-endian f64 in declared layer order.
//! Parameter arrays come first, then the batch-norm running statistics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stsc_core::model::{Model, ModelConfig, Params};

use crate::clipio::write_atomic;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    pub dtype: String,
    pub layers: Vec<LayerEntry>,
    pub train_steps: u64,
}

fn layer_order(model: &Model) -> Vec<(&'static str, Vec<f64>)> {
    let mut out: Vec<(&'static str, Vec<f64>)> = model
        .params
        .arrays()
        .iter()
        .map(|(name, values)| (*name, (*values).clone()))
        .collect();
    out.push(("bn_running_mean", model.bn_running_mean.clone()));
    out.push(("bn_running_var", model.bn_running_var.clone()));
    out
}

pub fn save_checkpoint(dir: &Path, model: &Model) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let layers = layer_order(model);
    let manifest = CheckpointManifest {
        model: model.config.clone(),
        dtype: "f64".into(),
        layers: layers
            .iter()
            .map(|(name, values)| LayerEntry {
                name: (*name).into(),
                len: values.len(),
            })
            .collect(),
        train_steps: model.train_steps,
    };
    let mut bin = Vec::new();
    for (_, values) in &layers {
        for v in values {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join("params.bin"), &bin)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(CliError::json(dir))?;
    write_atomic(&dir.join("checkpoint.json"), json.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let manifest_path = dir.join("checkpoint.json");
    let text = fs::read_to_string(&manifest_path).map_err(CliError::io(&manifest_path))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(CliError::json(&manifest_path))?;
    if manifest.dtype != "f64" {
        return Err(CliError::format(
            dir,
            format!("unsupported dtype {:?}", manifest.dtype),
        ));
    }
    manifest.model.validate()?;
    let bin_path = dir.join("params.bin");
    let raw = fs::read(&bin_path).map_err(CliError::io(&bin_path))?;
    let expected: usize = manifest.layers.iter().map(|l| l.len).sum();
    if raw.len() != expected * 8 {
        return Err(CliError::format(
            &bin_path,
            format!("{} bytes, expected {}", raw.len(), expected * 8),
        ));
    }
    let mut values = Vec::with_capacity(expected);
    for chunk in raw.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut params = Params::zeros(&manifest.model);
    let mut bn_running_mean = vec![0.0; manifest.model.proj_dim];
    let mut bn_running_var = vec![1.0; manifest.model.proj_dim];
    let mut offset = 0usize;
    for layer in &manifest.layers {
        let slice = &values[offset..offset + layer.len];
        offset += layer.len;
        match layer.name.as_str() {
            "bn_running_mean" => bn_running_mean = slice.to_vec(),
            "bn_running_var" => bn_running_var = slice.to_vec(),
            name => match params.arrays_mut().into_iter().find(|(n, _)| *n == name) {
                Some((_, arr)) => {
                    arr.clear();
                    arr.extend_from_slice(slice);
                }
                None => {
                    return Err(CliError::format(
                        &manifest_path,
                        format!("unknown layer {:?}", name),
                    ))
                }
            },
        }
    }
    let model = Model {
        config: manifest.model,
        params,
        bn_running_mean,
        bn_running_var,
        train_steps: manifest.train_steps,
    };
    for (name, arr) in model.params.arrays() {
        let want = Params::zeros(&model.config)
            .arrays()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, a)| a.len())
            .unwrap();
        if arr.len() != want {
            return Err(CliError::format(
                &manifest_path,
                format!("layer {} has {} values, expected {}", name, arr.len(), want),
            ));
        }
    }
    if !model.params.all_finite() {
        return Err(CliError::format(dir, "non-finite parameter values"));
    }
    Ok(model)
}
