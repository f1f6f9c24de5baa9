use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::adg::TextEncoder;
use crate::data::TagVocabulary;
use crate::lor::mix_seed;
use crate::model::StickerTagger;
use crate::{Error, Result};

const MODEL_STREAM: u64 = 1;
const TEXT_STREAM: u64 = 2;

/// Everything stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub vocab_hash: String,
    pub tags: Vec<String>,
    /// Completed epochs when saved.
    pub epoch: usize,
    pub val_top1_cf1: Option<f64>,
}

/// A tagger with its frozen text encoder and tag vocabulary.
pub struct Bundle {
    pub model: StickerTagger,
    pub model_vars: VarMap,
    pub text: TextEncoder,
    text_vars: VarMap,
    pub config: TrainConfig,
    pub vocabulary: TagVocabulary,
}

impl Bundle {
    /// Freshly initialized parameters derived from `config.seed`.
    pub fn init(config: &TrainConfig, vocabulary: TagVocabulary, device: &Device) -> Result<Self> {
        let mut config = config.clone();
        config.model.num_tags = vocabulary.len();
        let (model, model_vars) = StickerTagger::seeded(config.model.clone(), mix_seed(config.seed, MODEL_STREAM), DType::F32, device)?;
        let (text, ps) = TextEncoder::seeded(mix_seed(config.seed, TEXT_STREAM), config.model.text, device)?;
        Ok(Self {
            model,
            model_vars,
            text,
            text_vars: ps.into_varmap(),
            config,
            vocabulary,
        })
    }

    fn tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for vars in [&self.model_vars, &self.text_vars] {
            for (name, var) in vars.data().lock().unwrap().iter() {
                out.insert(name.clone(), var.as_tensor().clone());
            }
        }
        out
    }

    /// Writes `<path>` (safetensors) and `<path>.json` with [`CheckpointMeta`].
    pub fn save(&self, path: &Path, epoch: usize, val_top1_cf1: Option<f64>) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path)?;
        let meta = CheckpointMeta {
            config: self.config.clone(),
            vocab_hash: self.vocabulary.hash(),
            tags: self.vocabulary.tags().to_vec(),
            epoch,
            val_top1_cf1,
        };
        let sidecar = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path, device: &Device) -> Result<(Self, CheckpointMeta)> {
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let vocabulary = TagVocabulary::new(meta.tags.clone())?;
        if vocabulary.hash() != meta.vocab_hash {
            return Err(Error::VocabularyMismatch {
                expected: meta.vocab_hash.clone(),
                found: vocabulary.hash(),
            });
        }
        let bundle = Self::init(&meta.config, vocabulary, device)?;
        let stored = candle_core::safetensors::load(path, device)?;
        for vars in [&bundle.model_vars, &bundle.text_vars] {
            for (name, var) in vars.data().lock().unwrap().iter() {
                let t = stored
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("{} lacks parameter {name}", path.display())))?;
                var.set(&t.to_dtype(var.dtype())?)?;
            }
        }
        Ok((bundle, meta))
    }

    /// Fails unless `vocabulary` is the one the model was trained on.
    pub fn check_vocabulary(&self, vocabulary: &TagVocabulary) -> Result<()> {
        if vocabulary.hash() != self.vocabulary.hash() {
            return Err(Error::VocabularyMismatch {
                expected: self.vocabulary.hash(),
                found: vocabulary.hash(),
            });
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
