//! Sticker images, tag vocabularies and datasets.

mod manifest;
mod split;
mod stats;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub use manifest::{load_image, load_manifest, write_manifest, LoadOptions, ManifestRecord};
pub use split::{split_dataset, split_sizes};
pub use stats::{tag_stats, TagStats};
pub use synth::{generate_synthetic, generate_synthetic_to, SynthConfig};

/// A sticker as a `C×H×W` pixel buffer with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StickerImage {
    pub id: String,
    /// Channel-major pixel values, `channels * height * width` entries.
    pub pixels: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Generator attributes for synthetic items; empty for real stickers.
    pub meta: BTreeMap<String, String>,
}

impl StickerImage {
    pub fn new(
        id: impl Into<String>,
        pixels: Vec<f32>,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let id = id.into();
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Image {
                id,
                message: "image dimensions must be non-zero".into(),
            });
        }
        if pixels.len() != channels * height * width {
            return Err(Error::Image {
                id,
                message: format!(
                    "expected {} pixel values for {channels}x{height}x{width}, got {}",
                    channels * height * width,
                    pixels.len()
                ),
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Image {
                id,
                message: format!("pixel value {bad} outside [0, 1]"),
            });
        }
        Ok(Self {
            id,
            pixels,
            channels,
            height,
            width,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta = meta;
        self
    }

    /// Decodes an 8-bit RGB image.
    pub fn from_rgb8(id: impl Into<String>, img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut pixels = vec![0f32; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / 255.0;
            }
        }
        Self {
            id: id.into(),
            pixels,
            channels: 3,
            height: h,
            width: w,
            meta: BTreeMap::new(),
        }
    }

    /// Encodes to 8-bit RGB. Single-channel images are replicated.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w) = (self.height, self.width);
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let src = c.min(self.channels - 1);
                *v = quantize(self.pixels[src * h * w + y as usize * w + x as usize]);
            }
            image::Rgb(px)
        })
    }

    /// Digest of the 8-bit quantized pixels; stable across a PNG round trip.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.channels as u64).to_le_bytes());
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update((self.width as u64).to_le_bytes());
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| quantize(v)).collect();
        hasher.update(&bytes);
        hex::encode(hasher.finalize())
    }

    /// `(C, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.pixels, (self.channels, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Ordered, duplicate-free tag list; the line number of a tag is its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagVocabulary {
    pub fn new(tags: Vec<String>) -> Result<Self> {
        if tags.len() < 2 {
            return Err(Error::Vocabulary(format!(
                "at least 2 tags are required, got {}",
                tags.len()
            )));
        }
        let mut index = HashMap::with_capacity(tags.len());
        for (i, tag) in tags.iter().enumerate() {
            if tag.trim().is_empty() {
                return Err(Error::Vocabulary(format!("tag {i} is blank")));
            }
            if index.insert(tag.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate tag {tag:?}")));
            }
        }
        Ok(Self { tags, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tags = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(tags)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.tags.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, id: usize) -> Option<&str> {
        self.tags.get(id).map(String::as_str)
    }

    /// Digest of the tag list, used to pair checkpoints and probability dumps
    /// with the dataset they were produced from.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for tag in &self.tags {
            hasher.update(tag.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub image: StickerImage,
    pub tags: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub vocabulary: TagVocabulary,
}

impl Dataset {
    pub fn new(items: Vec<Item>, vocabulary: TagVocabulary) -> Result<Self> {
        let m = vocabulary.len();
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if item.tags.is_empty() {
                return Err(Error::EmptyTags(item.image.id.clone()));
            }
            if let Some(&bad) = item.tags.iter().find(|&&t| t >= m) {
                return Err(Error::InvalidArgument(format!(
                    "item {} has tag id {bad} but the vocabulary has {m} tags",
                    item.image.id
                )));
            }
            if !seen.insert(item.image.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate item id {}",
                    item.image.id
                )));
            }
        }
        Ok(Self { items, vocabulary })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_tags(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.image.id.as_str())
    }

    pub fn labels(&self) -> Vec<BTreeSet<usize>> {
        self.items.iter().map(|i| i.tags.clone()).collect()
    }

    /// Items sorted by id, so downstream shuffles do not depend on manifest order.
    pub fn sorted_by_id(mut self) -> Self {
        self.items.sort_by(|a, b| a.image.id.cmp(&b.image.id));
        self
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
        }
    }
}
