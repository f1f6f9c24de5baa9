//! Masking rounds and renewed attention for one sticker under an untrained
//! reconstruction path.
//!
//!     cargo run --release --example local_reattention

use candle_core::{DType, Device};
use stickertag::data::{generate_synthetic, SynthConfig};
use stickertag::lor::{patchify_batch, sample_mask_rounds};
use stickertag::model::{ModelConfig, StickerTagger};

fn main() -> stickertag::Result<()> {
    let ds = generate_synthetic(&SynthConfig { n: 1, num_tags: 12, ..Default::default() }, 5)?;
    let sticker = &ds.items[0].image;
    println!("{} tagged {:?}", sticker.id, ds.items[0].tags.iter().map(|&t| ds.vocabulary.tag(t).unwrap()).collect::<Vec<_>>());

    let cfg = ModelConfig::desk(12);
    let plan = sample_mask_rounds(cfg.num_patches(), 0.4, 11)?;
    for (r, round) in plan.rounds.iter().enumerate() {
        println!("round {r}: masks {round:?}");
    }

    let (model, _) = StickerTagger::seeded(cfg.clone(), 0, DType::F32, &Device::Cpu)?;
    let images = sticker.to_tensor(&Device::Cpu, DType::F32)?.unsqueeze(0)?;
    let patches = patchify_batch(&images, cfg.patch_size)?;
    let (weights, l1) = model.local_reattention(&patches, &[0], 0.4, 11)?;
    let w: Vec<f32> = weights.squeeze(0)?.to_vec1()?;
    let side = cfg.width / cfg.patch_size;
    println!("masked-patch L1 {:.4}; renewed attention per patch:", l1.to_scalar::<f32>()?);
    for row in w.chunks(side) {
        println!("  {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
