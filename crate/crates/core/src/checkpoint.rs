//! Self-describing JSON checkpoints: every parameter group with named
//! shapes, the vocabulary, the model configuration, and a format version.
//! Loading a checkpoint with mismatched dimensions is an error, never a
//! silent reshape.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::corpus::Vocabulary;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedMat {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    params: Vec<NamedMat>,
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let params = model
        .params
        .visit()
        .into_iter()
        .map(|(name, mat)| NamedMat {
            name,
            rows: mat.rows(),
            cols: mat.cols(),
            data: mat.data().to_vec(),
        })
        .collect();
    let ckpt = Checkpoint {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        params,
    };
    let json = serde_json::to_string(&ckpt)
        .map_err(|e| Error::Checkpoint(format!("serialization failed: {}", e)))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&content)
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {}", e)))?;
    if ckpt.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} unsupported (expected {})",
            ckpt.format_version, FORMAT_VERSION
        )));
    }
    let vocab = Vocabulary::from_tokens(ckpt.vocab)?;

    // Build a skeleton with the stored config, then fill each group by
    // name, demanding exact shape agreement.
    let mut params = ModelParams::init(vocab.len(), &ckpt.config, 0);
    let expected: Vec<String> = params.visit().into_iter().map(|(n, _)| n).collect();
    if ckpt.params.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameter groups, model needs {}",
            ckpt.params.len(),
            expected.len()
        )));
    }
    for stored in ckpt.params {
        let slot = params.get_mut(&stored.name).ok_or_else(|| {
            Error::Checkpoint(format!("unknown parameter group \"{}\"", stored.name))
        })?;
        if slot.shape() != (stored.rows, stored.cols) {
            return Err(Error::Checkpoint(format!(
                "group \"{}\" is {}x{} in the checkpoint but {}x{} in the model",
                stored.name,
                stored.rows,
                stored.cols,
                slot.shape().0,
                slot.shape().1
            )));
        }
        if stored.data.len() != stored.rows * stored.cols {
            return Err(Error::Checkpoint(format!(
                "group \"{}\" carries {} values for a {}x{} shape",
                stored.name,
                stored.data.len(),
                stored.rows,
                stored.cols
            )));
        }
        *slot = Mat::from_vec(stored.rows, stored.cols, stored.data);
    }
    Ok(Model {
        params,
        vocab,
        config: ckpt.config,
    })
}
