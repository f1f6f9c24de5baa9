//! Train a few epochs, then tag a single image file the way `stickertag
//! predict` does.
//!
//!     cargo run --release --example predict

use candle_core::Device;
use stickertag::adg::{describe, describe_all, DescribeOptions, DescriptionCache, StubChatClient};
use stickertag::data::{generate_synthetic, load_image, split_dataset, LoadOptions, SynthConfig};
use stickertag::trainer::{predict_one, train, Bundle, TrainConfig};

fn main() -> stickertag::Result<()> {
    let ds = generate_synthetic(&SynthConfig { n: 300, num_tags: 6, ..Default::default() }, 2)?;
    let cache = DescriptionCache::in_memory();
    let client = StubChatClient::new();
    let stickers: Vec<_> = ds.items.iter().map(|i| &i.image).collect();
    describe_all(&stickers, &client, &cache, DescribeOptions::default(), 1)?;

    let cfg = TrainConfig { epochs: 3, ..TrainConfig::desk(ds.num_tags()) };
    let (tr, va, te) = split_dataset(&ds, cfg.split.as_tuple(), cfg.seed)?;
    let out = std::env::temp_dir().join("stickertag-predict");
    let run = train(&cfg, &tr, &va, &cache, &out)?;

    let sample = &te.items[0];
    let png = out.join("sample.png");
    sample.image.to_rgb8().save(&png).map_err(|e| stickertag::Error::Image { id: sample.image.id.clone(), message: e.to_string() })?;

    let (bundle, meta) = Bundle::load(&run.best, &Device::Cpu)?;
    let mut sticker = load_image(&sample.image.id, &png, LoadOptions { height: 64, width: 64 })?;
    sticker.meta = sample.image.meta.clone();
    let desc = describe(&sticker, &client, &cache, DescribeOptions::default())?;
    let pred = predict_one(&bundle, &sticker, &desc, 3)?;
    println!("checkpoint from epoch {}; truth {:?}", meta.epoch, sample.tags.iter().map(|&t| ds.vocabulary.tag(t).unwrap()).collect::<Vec<_>>());
    for &j in &pred.topc {
        println!("{}\t{:.4}", bundle.vocabulary.tag(j).unwrap(), pred.probs.probs[j]);
    }
    Ok(())
}
