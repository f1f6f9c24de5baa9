//! Score a probability matrix with top-k and threshold selection, and replay
//! it from a saved dump.
//!
//!     cargo run --example metrics_report

use std::collections::BTreeSet;

use stickertag::metrics::{report, ProbabilityDump, DEFAULT_KS, DEFAULT_THRESHOLD};

fn main() -> stickertag::Result<()> {
    let probs = vec![
        vec![0.62, 0.20, 0.08, 0.05, 0.03, 0.02],
        vec![0.10, 0.45, 0.40, 0.02, 0.02, 0.01],
        vec![0.05, 0.05, 0.10, 0.70, 0.05, 0.05],
        vec![0.30, 0.05, 0.05, 0.05, 0.25, 0.30],
    ];
    let truths: Vec<BTreeSet<usize>> = vec![[0].into(), [1, 2].into(), [3].into(), [4, 5].into()];
    let r = report(&probs, &truths, &DEFAULT_KS, DEFAULT_THRESHOLD)?;
    println!("{:>9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "", "CP", "CR", "CF1", "OP", "OR", "OF1");
    for (k, s) in &r.per_k {
        let v = s.values();
        println!("{:>9} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}", format!("top-{k}"), v[0], v[1], v[2], v[3], v[4], v[5]);
    }
    let v = r.threshold_mode.values();
    println!("{:>9} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}", format!(">{}", r.threshold), v[0], v[1], v[2], v[3], v[4], v[5]);

    let path = std::env::temp_dir().join("stickertag-probs.bin");
    let dump = ProbabilityDump {
        ids: (0..probs.len()).map(|i| format!("s{i}")).collect(),
        vocab_hash: "example".into(),
        probs: probs.iter().map(|r| r.iter().map(|&p| p as f32).collect()).collect(),
    };
    dump.write(&path)?;
    let replayed = report(&ProbabilityDump::read(&path)?.probs_f64(), &truths, &DEFAULT_KS, DEFAULT_THRESHOLD)?;
    println!("replayed from {} matches: {}", path.display(), replayed == r);
    Ok(())
}
