//! End-to-end desk run on a synthetic corpus.
//!
//!     cargo run --release --example train_desk -- [epochs] [n] [full|no_lor|no_prompt|no_penalty]

use std::time::Instant;

use stickertag::adg::{describe_all, DescribeOptions, DescriptionCache, StubChatClient};
use stickertag::data::{generate_synthetic, split_dataset, SynthConfig};
use stickertag::trainer::{evaluate, train, Ablations, TrainConfig};

fn main() -> stickertag::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(Ok(20), |s| s.parse()).expect("epochs");
    let n = args.get(2).map_or(Ok(2000), |s| s.parse()).expect("n");
    let ablations = match args.get(3).map(String::as_str).unwrap_or("full") {
        "no_lor" => Ablations { no_lor: true, ..Default::default() },
        "no_prompt" => Ablations { no_prompt: true, ..Default::default() },
        "no_penalty" => Ablations { no_penalty: true, ..Default::default() },
        _ => Ablations::default(),
    };

    let ds = generate_synthetic(&SynthConfig { n, ..Default::default() }, 7)?;
    let cache = DescriptionCache::in_memory();
    let stickers: Vec<_> = ds.items.iter().map(|i| &i.image).collect();
    describe_all(&stickers, &StubChatClient::new(), &cache, DescribeOptions::default(), 1)?;

    let cfg = TrainConfig { epochs, ablations, seed: 7, ..TrainConfig::desk(ds.num_tags()) };
    let (tr, va, te) = split_dataset(&ds, cfg.split.as_tuple(), cfg.seed)?;
    let out = std::env::temp_dir().join(format!("stickertag-desk-{}", ablations.name()));
    let start = Instant::now();
    let run = train(&cfg, &tr, &va, &cache, &out)?;
    println!("trained {} steps in {:.1?}", run.steps.len(), start.elapsed());
    if let (Some(first), Some(last)) = (run.epochs.first(), run.epochs.last()) {
        println!("mean loss: epoch 0 {:.4}, last epoch {:.4}", first.mean_total, last.mean_total);
    }
    let report = evaluate(&run.best, &te, &cache, &[1, 3, 5])?;
    println!("{}", report.to_json()?);
    Ok(())
}
