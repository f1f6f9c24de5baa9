use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::AttributeDescriptions;
use crate::nn::{mean_pool, Encoder, EncoderConfig, ParamStore};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    /// Word hash buckets; id 0 is reserved for the empty-text placeholder.
    pub buckets: usize,
    pub max_len: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 4,
            mlp_dim: 128,
            buckets: 4096,
            max_len: 32,
        }
    }
}

/// Token embedding plus a small transformer, mean-pooled over tokens.
/// Words are lowercased alphanumeric runs hashed into a fixed bucket table.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    cfg: TextEncoderConfig,
    embed: Tensor,
    pos: Tensor,
    encoder: Encoder,
}

impl TextEncoder {
    pub fn new(ps: &mut ParamStore, cfg: TextEncoderConfig) -> Result<Self> {
        let embed = ps.normal("text_encoder.embed", &[cfg.buckets + 1, cfg.dim], 1.0)?;
        let pos = ps.normal("text_encoder.pos", &[cfg.max_len, cfg.dim], 0.02)?;
        let encoder = Encoder::new(
            ps,
            "text_encoder.encoder",
            &EncoderConfig {
                layers: cfg.layers,
                dim: cfg.dim,
                heads: cfg.heads,
                mlp_dim: cfg.mlp_dim,
            },
        )?;
        Ok(Self { cfg, embed, pos, encoder })
    }

    /// Standalone encoder with its own seeded parameters.
    pub fn seeded(seed: u64, cfg: TextEncoderConfig, device: &Device) -> Result<(Self, ParamStore)> {
        let mut ps = ParamStore::new(seed, DType::F32, device);
        let enc = Self::new(&mut ps, cfg)?;
        Ok((enc, ps))
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn token_ids(&self, text: &str) -> Vec<u32> {
        let ids: Vec<u32> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .take(self.cfg.max_len)
            .map(|w| 1 + (fnv1a(&w.to_lowercase()) % self.cfg.buckets as u64) as u32)
            .collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f32>> {
        let ids = self.token_ids(text);
        let n = ids.len();
        let ids = Tensor::from_vec(ids, n, self.embed.device())?;
        let tokens = self.embed.index_select(&ids, 0)?;
        let tokens = (tokens + self.pos.narrow(0, 0, n)?)?.unsqueeze(0)?;
        let pooled = mean_pool(&self.encoder.forward(&tokens)?)?.squeeze(0)?;
        Ok(pooled.to_dtype(DType::F32)?.to_vec1()?)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// One vector per attribute, in content, style, role, action order.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionEmbeddings {
    pub vectors: [Vec<f32>; 4],
}

pub fn encode_descriptions(desc: &AttributeDescriptions, encoder: &TextEncoder) -> Result<DescriptionEmbeddings> {
    let [a, b, c, d] = desc.fields();
    Ok(DescriptionEmbeddings {
        vectors: [encoder.encode(a)?, encoder.encode(b)?, encoder.encode(c)?, encoder.encode(d)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(fields: [&str; 4]) -> AttributeDescriptions {
        AttributeDescriptions {
            id: "x".into(),
            content: fields[0].into(),
            style: fields[1].into(),
            role: fields[2].into(),
            action: fields[3].into(),
            source_model: "stub".into(),
            prompt_hash: String::new(),
            fallback: false,
        }
    }

    fn encoder(dim: usize) -> TextEncoder {
        let cfg = TextEncoderConfig { dim, heads: 2, mlp_dim: 32, ..Default::default() };
        TextEncoder::seeded(5, cfg, &Device::Cpu).unwrap().0
    }

    #[test]
    fn shape_and_determinism() {
        let enc = encoder(16);
        let d = desc(["none", "flat red", "cat", "peeking"]);
        let a = encode_descriptions(&d, &enc).unwrap();
        let b = encode_descriptions(&d.clone(), &enc).unwrap();
        assert_eq!(a, b);
        assert!(a.vectors.iter().all(|v| v.len() == 16 && v.iter().all(|x| x.is_finite())));
        let other = encoder(16);
        assert_eq!(encode_descriptions(&d, &other).unwrap(), a);
    }

    #[test]
    fn permuting_fields_permutes_vectors() {
        let enc = encoder(16);
        let a = encode_descriptions(&desc(["one", "two", "three", "four"]), &enc).unwrap();
        let b = encode_descriptions(&desc(["two", "one", "four", "three"]), &enc).unwrap();
        assert_eq!(a.vectors[0], b.vectors[1]);
        assert_eq!(a.vectors[1], b.vectors[0]);
        assert_eq!(a.vectors[2], b.vectors[3]);
        assert_eq!(a.vectors[3], b.vectors[2]);
        assert_ne!(a.vectors[0], a.vectors[1]);
    }

    #[test]
    fn empty_text_uses_placeholder() {
        let enc = encoder(16);
        assert_eq!(enc.token_ids(""), vec![0]);
        assert_eq!(enc.token_ids("Red, red!"), enc.token_ids("red red"));
        assert_eq!(enc.encode("").unwrap().len(), 16);
    }
}
