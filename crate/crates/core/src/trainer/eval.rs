use std::collections::BTreeMap;

use candle_core::Device;

use super::checkpoint::Bundle;
use super::features::Features;
use super::TrainConfig;
use crate::adg::{encode_descriptions, AttributeDescriptions};
use crate::data::StickerImage;
use crate::metrics::{report, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{topc_select, Batch, ForwardOptions, PathKind, Prediction, StickerTagger, TagDistribution, PROMPT_SLOTS};
use crate::{Error, Result};

/// Forward options for inference under `cfg`.
pub fn eval_options(cfg: &TrainConfig) -> ForwardOptions {
    ForwardOptions {
        lor: !cfg.ablations.no_lor && cfg.eval_path == PathKind::Reconstructed,
        prompts: !cfg.ablations.no_prompt,
        original: false,
        mask_ratio: cfg.mask_ratio,
        mask_seed: cfg.eval_seed,
    }
}

/// Tag probabilities for every row of `features`, in order.
pub fn predict_probs(model: &StickerTagger, features: &Features, cfg: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    let opts = eval_options(cfg);
    let mut probs = Vec::with_capacity(features.len());
    let all: Vec<usize> = (0..features.len()).collect();
    for chunk in all.chunks(cfg.eval_batch.max(1)) {
        let out = model.forward_dual(&features.batch(chunk)?, &opts)?;
        probs.extend(TagDistribution::batch_from_logits(&out.logits_r, cfg.eval_path)?.into_iter().map(|d| d.probs));
    }
    Ok(probs)
}

/// Report labels naming the ablations and the evaluated path.
pub fn report_labels(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let a = &cfg.ablations;
    BTreeMap::from([
        ("no_lor".to_string(), a.no_lor.to_string()),
        ("no_prompt".to_string(), a.no_prompt.to_string()),
        ("no_penalty".to_string(), a.no_penalty.to_string()),
        ("path".to_string(), serde_json::to_value(cfg.eval_path).unwrap().as_str().unwrap().to_string()),
    ])
}

/// Metrics of a bundle on prepared features. Probabilities are rounded to
/// `f32` first, so a saved dump replays to the same report.
pub fn evaluate_features(bundle: &Bundle, features: &Features, ks: &[usize]) -> Result<(MetricsReport, Vec<Vec<f32>>)> {
    let probs: Vec<Vec<f32>> = predict_probs(&bundle.model, features, &bundle.config)?
        .into_iter()
        .map(|r| r.into_iter().map(|p| p as f32).collect())
        .collect();
    let wide: Vec<Vec<f64>> = probs.iter().map(|r| r.iter().map(|&p| p as f64).collect()).collect();
    let mut r = report(&wide, &features.labels, ks, DEFAULT_THRESHOLD)?;
    r.labels = report_labels(&bundle.config);
    Ok((r, probs))
}

/// Top-`c` tags for a single sticker and its descriptions.
pub fn predict_one(bundle: &Bundle, sticker: &StickerImage, descriptions: &AttributeDescriptions, c: usize) -> Result<Prediction> {
    let cfg = bundle.model.config();
    if (sticker.channels, sticker.height, sticker.width) != (cfg.channels, cfg.height, cfg.width) {
        return Err(Error::InvalidArgument(format!(
            "image is {}x{}, the model expects {}x{}",
            sticker.height, sticker.width, cfg.height, cfg.width
        )));
    }
    let device = Device::Cpu;
    let emb = encode_descriptions(descriptions, &bundle.text)?;
    let desc: Vec<f32> = emb.vectors.concat();
    let batch = Batch {
        images: sticker.to_tensor(&device, candle_core::DType::F32)?.unsqueeze(0)?,
        descriptions: candle_core::Tensor::from_vec(desc, (1, PROMPT_SLOTS, bundle.text.dim()), &device)?,
        item_keys: vec![0],
    };
    let out = bundle.model.forward_dual(&batch, &eval_options(&bundle.config))?;
    let dist = TagDistribution::batch_from_logits(&out.logits_r, bundle.config.eval_path)?.remove(0);
    topc_select(&dist, c)
}
