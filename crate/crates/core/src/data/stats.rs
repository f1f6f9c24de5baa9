use std::collections::BTreeMap;

use serde::Serialize;

use super::Dataset;

#[derive(Debug, Clone, Serialize)]
pub struct TagStats {
    /// Samples per tag id.
    pub per_tag: Vec<usize>,
    /// Percentage of stickers carrying exactly `k` tags.
    pub tags_per_sticker: BTreeMap<usize, f64>,
    /// Mean vocabulary-entry length in whitespace-delimited words.
    pub mean_tag_words: f64,
}

pub fn tag_stats(ds: &Dataset) -> TagStats {
    let mut per_tag = vec![0usize; ds.num_tags()];
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for item in &ds.items {
        for &t in &item.tags {
            per_tag[t] += 1;
        }
        *counts.entry(item.tags.len()).or_default() += 1;
    }
    let n = ds.len().max(1) as f64;
    let tags_per_sticker = counts
        .into_iter()
        .map(|(k, c)| (k, 100.0 * c as f64 / n))
        .collect();
    let tags = ds.vocabulary.tags();
    let words: usize = tags.iter().map(|t| t.split_whitespace().count()).sum();
    TagStats {
        per_tag,
        tags_per_sticker,
        mean_tag_words: words as f64 / tags.len() as f64,
    }
}
