//! The dual-path tagger.
//!
//! Both paths patchify and tokenize the sticker with shared weights. The
//! reconstructed path reweights tokens by the renewed attention from
//! [`crate::lor`] before the image encoder; the original path skips masking.
//! Each path mean-pools its encoder output into `h`, builds the sequence
//! `[CLS] S1 S2 S3 S4 h [SEP]` where `S_j` are the description-derived soft
//! prompts, fuses it with a small transformer and classifies the `[CLS]`
//! state with a softmax over tags.

use candle_core::{DType, Device, IndexOp, Module, Tensor, D};
use candle_nn::{Linear, VarMap};
use serde::{Deserialize, Serialize};

use crate::adg::TextEncoderConfig;
use crate::lor::{
    apply_attention, corrupt_batch, mix_seed, patch_similarity_batch, patchify_batch, reconstruct,
    renewed_attention_batch, sample_mask_rounds, tokenize,
};
use crate::nn::{mean_pool, Encoder, EncoderConfig, ParamStore, SequenceEncoder};
use crate::{Error, Result};

/// Number of soft-prompt slots: content, style, role, action.
pub const PROMPT_SLOTS: usize = 4;
/// Index of the image token in the full prompt sequence.
pub const IMAGE_TOKEN_POSITION: usize = 1 + PROMPT_SLOTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// `S_j` is a learnable projection of the sticker's own description embedding.
    #[default]
    PerSample,
    /// `S_j` is a learnable vector shared by all stickers, initialized from
    /// the projected corpus-mean description embedding.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub mlp_dim: usize,
    pub num_tags: usize,
    pub prompt_mode: PromptMode,
    /// Learned positional embeddings in the image encoder.
    pub positional: bool,
    pub text: TextEncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(12)
    }
}

impl ModelConfig {
    /// 64×64 stickers, 16-pixel patches, a 4-layer 128-wide image encoder.
    pub fn desk(num_tags: usize) -> Self {
        Self {
            channels: 3,
            height: 64,
            width: 64,
            patch_size: 16,
            d_model: 128,
            encoder_layers: 4,
            encoder_heads: 4,
            fusion_layers: 2,
            fusion_heads: 4,
            mlp_dim: 256,
            num_tags,
            prompt_mode: PromptMode::PerSample,
            positional: true,
            text: TextEncoderConfig::default(),
        }
    }

    /// 224×224 stickers with 32-pixel patches (`D = 3072`).
    pub fn full_scale(num_tags: usize) -> Self {
        Self {
            height: 224,
            width: 224,
            patch_size: 32,
            d_model: 768,
            encoder_layers: 12,
            encoder_heads: 12,
            fusion_layers: 2,
            fusion_heads: 12,
            mlp_dim: 3072,
            text: TextEncoderConfig {
                dim: 768,
                layers: 12,
                heads: 12,
                mlp_dim: 3072,
                buckets: 30_000,
                max_len: 128,
            },
            ..Self::desk(num_tags)
        }
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        crate::lor::check_patchable(self.height, self.width, self.patch_size)?;
        if self.num_tags < 2 {
            return Err(Error::Config(format!("need at least 2 tags, got {}", self.num_tags)));
        }
        for (what, dim, heads) in [
            ("encoder", self.d_model, self.encoder_heads),
            ("fusion", self.d_model, self.fusion_heads),
            ("text encoder", self.text.dim, self.text.heads),
        ] {
            if heads == 0 || dim % heads != 0 {
                return Err(Error::Config(format!("{what}: width {dim} not divisible by {heads} heads")));
            }
        }
        Ok(())
    }
}

/// Image encoder over patch tokens: learned positions then transformer blocks.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    pos: Option<Tensor>,
    encoder: Encoder,
}

impl SequenceEncoder for PatchEncoder {
    fn encode(&self, tokens: &Tensor) -> candle_core::Result<Tensor> {
        match &self.pos {
            Some(pos) => self.encoder.forward(&tokens.broadcast_add(pos)?),
            None => self.encoder.forward(tokens),
        }
    }
}

/// Per-call switches for [`StickerTagger::forward_dual`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Run local re-attention; when off the attention is all ones and the two
    /// paths coincide.
    pub lor: bool,
    /// Include the four soft prompts in the fused sequence.
    pub prompts: bool,
    /// Also compute the original (unmasked, unweighted) path.
    pub original: bool,
    pub mask_ratio: f64,
    /// Base seed for the masking rounds; item `i` of the batch uses
    /// `mix_seed(mask_seed, item_keys[i])`.
    pub mask_seed: u64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            lor: true,
            prompts: true,
            original: true,
            mask_ratio: 0.4,
            mask_seed: 0,
        }
    }
}

/// A batch ready for the network.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(B, C, H, W)` pixels in `[0, 1]`.
    pub images: Tensor,
    /// `(B, 4, d_text)` description embeddings.
    pub descriptions: Tensor,
    /// Stable per-item keys that seed each item's masking rounds.
    pub item_keys: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct DualOutput {
    /// `(B, m)` logits of the reconstructed (re-attended) path.
    pub logits_r: Tensor,
    /// `(B, m)` logits of the original path, when requested.
    pub logits_o: Option<Tensor>,
    /// `(B, N)` renewed attention weights.
    pub attention: Tensor,
    /// Mean absolute pixel error over masked patches.
    pub recon_l1: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct StickerTagger {
    cfg: ModelConfig,
    patch_embed: Linear,
    image_encoder: PatchEncoder,
    pred_head: Linear,
    mask_token: Tensor,
    prompt_proj: Vec<Linear>,
    global_prompts: Option<Tensor>,
    cls_token: Tensor,
    sep_token: Tensor,
    fusion_pos: Tensor,
    fusion: Encoder,
    classifier: Linear,
}

impl StickerTagger {
    pub fn new(ps: &mut ParamStore, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let dm = cfg.d_model;
        let d = cfg.patch_dim();
        let n = cfg.num_patches();
        let patch_embed = ps.linear("patch_embed", d, dm)?;
        let pos = if cfg.positional {
            Some(ps.normal("image_encoder.pos", &[n, dm], 0.02)?)
        } else {
            None
        };
        let encoder = Encoder::new(
            ps,
            "image_encoder",
            &EncoderConfig {
                layers: cfg.encoder_layers,
                dim: dm,
                heads: cfg.encoder_heads,
                mlp_dim: cfg.mlp_dim,
            },
        )?;
        let pred_head = ps.linear_const_bias("pred_head", dm, d, 0.5)?;
        let mask_token = ps.constant("mask_token", &[d], 0.5)?;
        let prompt_proj = (0..PROMPT_SLOTS)
            .map(|j| ps.linear(&format!("prompt_proj.{j}"), cfg.text.dim, dm))
            .collect::<Result<Vec<_>>>()?;
        let global_prompts = match cfg.prompt_mode {
            PromptMode::Global => Some(ps.normal("global_prompts", &[PROMPT_SLOTS, dm], 0.02)?),
            PromptMode::PerSample => None,
        };
        let cls_token = ps.normal("cls_token", &[dm], 0.02)?;
        let sep_token = ps.normal("sep_token", &[dm], 0.02)?;
        let fusion_pos = ps.normal("fusion.pos", &[PROMPT_SLOTS + 3, dm], 0.02)?;
        let fusion = Encoder::new(
            ps,
            "fusion",
            &EncoderConfig {
                layers: cfg.fusion_layers,
                dim: dm,
                heads: cfg.fusion_heads,
                mlp_dim: cfg.mlp_dim,
            },
        )?;
        let classifier = ps.linear("classifier", dm, cfg.num_tags)?;
        Ok(Self {
            cfg,
            patch_embed,
            image_encoder: PatchEncoder { pos, encoder },
            pred_head,
            mask_token,
            prompt_proj,
            global_prompts,
            cls_token,
            sep_token,
            fusion_pos,
            fusion,
            classifier,
        })
    }

    /// Builds a model with parameters drawn from `seed`.
    pub fn seeded(cfg: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<(Self, VarMap)> {
        let mut ps = ParamStore::new(seed, dtype, device);
        let model = Self::new(&mut ps, cfg)?;
        Ok((model, ps.into_varmap()))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.mask_token.dtype()
    }

    pub fn device(&self) -> &Device {
        self.mask_token.device()
    }

    pub fn image_encoder(&self) -> &PatchEncoder {
        &self.image_encoder
    }

    pub fn patch_embed(&self) -> &Linear {
        &self.patch_embed
    }

    pub fn pred_head(&self) -> &Linear {
        &self.pred_head
    }

    pub fn mask_token(&self) -> &Tensor {
        &self.mask_token
    }

    /// Mean-pooled image encoder output: `(B, N, d) -> (B, d)`.
    pub fn encode_image(&self, tokens: &Tensor) -> Result<Tensor> {
        Ok(mean_pool(&self.image_encoder.encode(tokens)?)?)
    }

    /// `[CLS] S1..S4 h [SEP]` as `(B, 7, d)`, or `[CLS] h [SEP]` without prompts.
    pub fn build_prompt_sequence(&self, descriptions: &Tensor, h: &Tensor, prompts: bool) -> Result<Tensor> {
        let b = h.dims()[0];
        let dm = self.cfg.d_model;
        let cls = self.cls_token.reshape((1, 1, dm))?.broadcast_as((b, 1, dm))?;
        let sep = self.sep_token.reshape((1, 1, dm))?.broadcast_as((b, 1, dm))?;
        let h = h.unsqueeze(1)?;
        if !prompts {
            return Ok(Tensor::cat(&[&cls, &h, &sep], 1)?);
        }
        let slots = match &self.global_prompts {
            Some(g) => g.unsqueeze(0)?.broadcast_as((b, PROMPT_SLOTS, dm))?,
            None => {
                let s = self
                    .prompt_proj
                    .iter()
                    .enumerate()
                    .map(|(j, proj)| proj.forward(&descriptions.i((.., j, ..))?))
                    .collect::<candle_core::Result<Vec<_>>>()?;
                Tensor::stack(&s, 1)?
            }
        };
        Ok(Tensor::cat(&[&cls, &slots, &h, &sep], 1)?)
    }

    /// Fusion encoder output at the `[CLS]` position: `(B, L, d) -> (B, d)`.
    pub fn fuse(&self, seq: &Tensor) -> Result<Tensor> {
        let len = seq.dims()[1];
        let pos = self.fusion_pos.narrow(0, 0, len)?;
        let out = self.fusion.forward(&seq.broadcast_add(&pos)?)?;
        Ok(out.i((.., 0, ..))?)
    }

    /// Tag logits `(B, m)`; softmax gives the tag distribution.
    pub fn classify(&self, fused: &Tensor) -> Result<Tensor> {
        Ok(self.classifier.forward(fused)?)
    }

    fn head_from_tokens(&self, tokens: &Tensor, descriptions: &Tensor, prompts: bool) -> Result<Tensor> {
        let h = self.encode_image(tokens)?;
        let seq = self.build_prompt_sequence(descriptions, &h, prompts)?;
        self.classify(&self.fuse(&seq)?)
    }

    /// Renewed attention for a batch of patch grids `(B, N, D)`.
    /// Returns the `(B, N)` weights and the masked-patch L1 error.
    pub fn local_reattention(&self, patches: &Tensor, item_keys: &[u64], mask_ratio: f64, mask_seed: u64) -> Result<(Tensor, Tensor)> {
        let (b, n, d) = patches.dims3()?;
        if item_keys.len() != b {
            return Err(Error::InvalidArgument(format!("{} item keys for a batch of {b}", item_keys.len())));
        }
        let plans = item_keys
            .iter()
            .map(|&k| sample_mask_rounds(n, mask_ratio, mix_seed(mask_seed, k)))
            .collect::<Result<Vec<_>>>()?;
        let rounds = plans[0].rounds.len();
        // (R, B, N) indicator, round-major
        let mut mask = Vec::with_capacity(rounds * b * n);
        for k in 0..rounds {
            for plan in &plans {
                mask.extend((0..n).map(|i| plan.rounds[k].contains(&i) as u8 as f32));
            }
        }
        let mask = Tensor::from_vec(mask, (rounds, b, n), patches.device())?.to_dtype(patches.dtype())?;
        let flat_mask = mask.reshape((rounds * b, n))?;
        let repeated = patches.unsqueeze(0)?.broadcast_as((rounds, b, n, d))?.reshape((rounds * b, n, d))?;
        let corrupted = corrupt_batch(&repeated, &flat_mask, &self.mask_token)?;
        let pred = reconstruct(&corrupted, &self.patch_embed, &self.image_encoder, &self.pred_head)?;
        let sims = patch_similarity_batch(&pred, &repeated)?.reshape((rounds, b, n))?;
        let weights = renewed_attention_batch(&sims, &mask)?;
        let l1 = ((&pred - &repeated)?.abs()?.mean(D::Minus1)? * &flat_mask)?.sum_all()?;
        let l1 = (l1 / flat_mask.sum_all()?)?;
        Ok((weights, l1))
    }

    pub fn forward_dual(&self, batch: &Batch, opts: &ForwardOptions) -> Result<DualOutput> {
        let images = batch.images.to_dtype(self.dtype())?;
        let descriptions = batch.descriptions.to_dtype(self.dtype())?;
        let patches = patchify_batch(&images, self.cfg.patch_size)?;
        let tokens = tokenize(&patches, &self.patch_embed)?;
        let (b, n, _) = tokens.dims3()?;

        if !opts.lor {
            let logits = self.head_from_tokens(&tokens, &descriptions, opts.prompts)?;
            return Ok(DualOutput {
                logits_o: opts.original.then(|| logits.clone()),
                logits_r: logits,
                attention: Tensor::ones((b, n), self.dtype(), self.device())?,
                recon_l1: None,
            });
        }

        let (weights, l1) = self.local_reattention(&patches, &batch.item_keys, opts.mask_ratio, opts.mask_seed)?;
        let attended = apply_attention(&tokens, &weights)?;
        let (logits_r, logits_o) = if opts.original {
            let both = Tensor::cat(&[&attended, &tokens], 0)?;
            let desc2 = Tensor::cat(&[&descriptions, &descriptions], 0)?;
            let logits = self.head_from_tokens(&both, &desc2, opts.prompts)?;
            (logits.narrow(0, 0, b)?, Some(logits.narrow(0, b, b)?))
        } else {
            (self.head_from_tokens(&attended, &descriptions, opts.prompts)?, None)
        };
        Ok(DualOutput {
            logits_r,
            logits_o,
            attention: weights,
            recon_l1: Some(l1),
        })
    }

    /// Sets the shared prompts to the projected mean description embeddings
    /// `(4, d_text)`. No-op in per-sample mode.
    pub fn init_global_prompts(&self, varmap: &VarMap, mean_descriptions: &Tensor) -> Result<()> {
        if self.global_prompts.is_none() {
            return Ok(());
        }
        let rows = self
            .prompt_proj
            .iter()
            .enumerate()
            .map(|(j, p)| p.forward(&mean_descriptions.to_dtype(self.dtype())?.i(j..j + 1)?))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let init = Tensor::cat(&rows, 0)?;
        let data = varmap.data().lock().unwrap();
        let var = data
            .get("global_prompts")
            .ok_or_else(|| Error::Config("global prompts missing from parameter map".into()))?;
        var.set(&init)?;
        Ok(())
    }
}

/// Which path a distribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Reconstructed,
    Original,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagDistribution {
    pub probs: Vec<f64>,
    pub path: PathKind,
}

impl TagDistribution {
    pub fn from_logits(logits: &[f64], path: PathKind) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        Self {
            probs: exp.into_iter().map(|e| e / z).collect(),
            path,
        }
    }

    /// Softmax of each row of a `(B, m)` logit tensor.
    pub fn batch_from_logits(logits: &Tensor, path: PathKind) -> Result<Vec<Self>> {
        let rows: Vec<Vec<f64>> = logits.to_dtype(DType::F64)?.to_vec2()?;
        Ok(rows.iter().map(|r| Self::from_logits(r, path)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub topc: Vec<usize>,
    pub probs: TagDistribution,
}

/// Ids of the `c` most probable tags, most probable first; ties go to the lower id.
pub fn topc_select(dist: &TagDistribution, c: usize) -> Result<Prediction> {
    let m = dist.probs.len();
    if c == 0 || c > m {
        return Err(Error::InvalidArgument(format!("top-C must lie in 1..={m}, got {c}")));
    }
    Ok(Prediction {
        topc: ranked(&dist.probs).into_iter().take(c).collect(),
        probs: dist.clone(),
    })
}

/// All ids ordered by descending score, ties by ascending id.
pub fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}
