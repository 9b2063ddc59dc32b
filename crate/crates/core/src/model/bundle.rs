//! Saving a trained model as a single checkpoint file.
//!
//! The parameters are written as ordinary tensors. One extra tensor named
//! [`META_TENSOR`] holds the UTF-8 bytes of a JSON document (model kind,
//! configuration, vocabulary, normalization flag), one byte per value, so
//! the file stays a plain checkpoint any reader of the format can list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelKind, TrainedModel};
use crate::error::{Error, Result};
use crate::tensor::{checkpoint, ModelParams, Tensor};
use crate::text::Vocabulary;

pub const META_TENSOR: &str = "__meta__";

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: ModelKind,
    config: ModelConfig,
    normalize: bool,
    vocab: Vocabulary,
}

pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Meta {
        kind: model.kind,
        config: model.config.clone(),
        normalize: model.normalize,
        vocab: model.vocab.clone(),
    })?;
    let meta = Tensor::new(vec![meta.len()], meta.into_iter().map(f64::from).collect())?;
    checkpoint::encode(
        model
            .params
            .iter()
            .map(|(k, t)| (k.as_str(), t))
            .chain(std::iter::once((META_TENSOR, &meta))),
    )
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut params = ModelParams::new();
    let mut meta = None;
    for (name, t) in checkpoint::decode(bytes)? {
        if name == META_TENSOR {
            let raw = t
                .data()
                .iter()
                .map(|&v| u8::try_from(v as i64).ok().filter(|b| f64::from(*b) == v))
                .collect::<Option<Vec<u8>>>()
                .ok_or_else(|| Error::Checkpoint("metadata tensor is not a byte string".into()))?;
            meta = Some(serde_json::from_slice::<Meta>(&raw)?);
        } else {
            params.insert(name, t)?;
        }
    }
    let meta = meta.ok_or_else(|| Error::Checkpoint(format!("no {META_TENSOR} tensor")))?;
    TrainedModel::new(meta.kind, meta.config, meta.vocab, meta.normalize, params)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
