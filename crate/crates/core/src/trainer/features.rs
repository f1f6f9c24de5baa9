use std::collections::{BTreeSet, HashMap};

use candle_core::{DType, Device, Tensor};

use crate::adg::{DescriptionCache, TextEncoder};
use crate::data::Dataset;
use crate::model::{Batch, ModelConfig, PROMPT_SLOTS};
use crate::{Error, Result};

/// Network-ready tensors for a whole split, in dataset order.
#[derive(Debug, Clone)]
pub struct Features {
    pub ids: Vec<String>,
    /// `(n, C, H, W)`.
    pub images: Tensor,
    /// `(n, 4, d_text)`.
    pub descriptions: Tensor,
    pub labels: Vec<BTreeSet<usize>>,
}

impl Features {
    /// Stacks images and embeds every sticker's four descriptions. Fails with
    /// the full list of ids that have no cached description.
    pub fn build(ds: &Dataset, cache: &DescriptionCache, text: &TextEncoder, cfg: &ModelConfig, device: &Device) -> Result<Self> {
        let missing: Vec<String> = ds.ids().filter(|id| !cache.contains(id)).map(str::to_string).collect();
        if !missing.is_empty() {
            return Err(Error::MissingDescriptions(missing));
        }
        let mut pixels = Vec::with_capacity(ds.len() * cfg.channels * cfg.height * cfg.width);
        let mut desc = Vec::with_capacity(ds.len() * PROMPT_SLOTS * text.dim());
        let mut memo: HashMap<String, Vec<f32>> = HashMap::new();
        for item in &ds.items {
            let img = &item.image;
            if (img.channels, img.height, img.width) != (cfg.channels, cfg.height, cfg.width) {
                return Err(Error::Config(format!(
                    "sticker {} is {}x{}x{}, the model expects {}x{}x{}",
                    img.id, img.channels, img.height, img.width, cfg.channels, cfg.height, cfg.width
                )));
            }
            pixels.extend_from_slice(&img.pixels);
            let record = cache.get(&img.id).expect("checked above");
            for field in record.fields() {
                if !memo.contains_key(field) {
                    memo.insert(field.to_string(), text.encode(field)?);
                }
                desc.extend_from_slice(&memo[field]);
            }
        }
        let n = ds.len();
        Ok(Self {
            ids: ds.ids().map(str::to_string).collect(),
            images: Tensor::from_vec(pixels, (n, cfg.channels, cfg.height, cfg.width), device)?,
            descriptions: Tensor::from_vec(desc, (n, PROMPT_SLOTS, text.dim()), device)?,
            labels: ds.labels(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows `indices`; each item's masking key is its row index.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let idx = Tensor::from_vec(indices.iter().map(|&i| i as u32).collect::<Vec<_>>(), indices.len(), self.images.device())?;
        Ok(Batch {
            images: self.images.index_select(&idx, 0)?,
            descriptions: self.descriptions.index_select(&idx, 0)?,
            item_keys: indices.iter().map(|&i| i as u64).collect(),
        })
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<BTreeSet<usize>> {
        indices.iter().map(|&i| self.labels[i].clone()).collect()
    }

    /// `(4, d_text)` mean description embedding.
    pub fn mean_descriptions(&self) -> Result<Tensor> {
        Ok(self.descriptions.to_dtype(DType::F64)?.mean(0)?.to_dtype(DType::F32)?)
    }
}
