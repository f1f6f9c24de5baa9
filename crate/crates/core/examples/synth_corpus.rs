//! Render a small synthetic corpus to disk and summarize its tags.
//!
//!     cargo run --example synth_corpus -- [out_dir]

use stickertag::data::{generate_synthetic_to, tag_stats, SynthConfig};

fn main() -> stickertag::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("stickertag-synth"), Into::into);
    let cfg = SynthConfig { n: 200, num_tags: 12, ..Default::default() };
    let (ds, manifest, vocab) = generate_synthetic_to(&cfg, 1, &out)?;
    println!("{} stickers, manifest {}, vocabulary {}", ds.len(), manifest.display(), vocab.display());

    let stats = tag_stats(&ds);
    for (tag, count) in ds.vocabulary.tags().iter().zip(&stats.per_tag) {
        println!("{tag:>10} {count}");
    }
    for (k, pct) in &stats.tags_per_sticker {
        println!("{k} tag(s): {pct:.1}%");
    }
    let first = &ds.items[0];
    println!("{}: {:?} {:?}", first.image.id, first.tags, first.image.meta);
    Ok(())
}
