//! Describe stickers with the offline stub and a resumable cache, then embed
//! the four descriptions.
//!
//!     cargo run --example describe_offline

use candle_core::Device;
use stickertag::adg::{build_prompt_turns, describe_all, encode_descriptions, DescribeOptions, DescriptionCache, StubChatClient, TextEncoder, TextEncoderConfig};
use stickertag::data::{generate_synthetic, SynthConfig};

fn main() -> stickertag::Result<()> {
    let ds = generate_synthetic(&SynthConfig { n: 10, num_tags: 9, ..Default::default() }, 3)?;
    let stickers: Vec<_> = ds.items.iter().map(|i| &i.image).collect();
    let path = std::env::temp_dir().join("stickertag-descriptions.jsonl");
    let _ = std::fs::remove_file(&path);

    for turn in build_prompt_turns() {
        println!("[{}] {}", turn.role.as_str(), turn.text);
    }

    let client = StubChatClient::new();
    let cache = DescriptionCache::open(&path)?;
    let first = describe_all(&stickers, &client, &cache, DescribeOptions::default(), 2)?;
    let again = describe_all(&stickers, &client, &cache, DescribeOptions::default(), 2)?;
    println!("first pass {first:?}\nsecond pass {again:?}, {} chat calls in total", client.calls());

    let record = cache.get(&stickers[0].id).expect("described");
    println!("{record:#?}");
    let (encoder, _) = TextEncoder::seeded(0, TextEncoderConfig::default(), &Device::Cpu)?;
    let emb = encode_descriptions(&record, &encoder)?;
    for (name, v) in ["content", "style", "role", "action"].iter().zip(&emb.vectors) {
        println!("{name:>8}: [{:.3}, {:.3}, {:.3}, ...]", v[0], v[1], v[2]);
    }
    Ok(())
}
