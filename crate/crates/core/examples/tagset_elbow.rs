//! Build a tag set from a keyword corpus: tf-idf, elbow search, k-means and a
//! naming worksheet.
//!
//!     cargo run --release --example tagset_elbow

use stickertag::tagset::{elbow_search, kmeans_cluster, majority_tag, tfidf_features, whitespace_tokens, ClusterReport, KeywordCorpus};

const THEMES: [&[&str]; 5] = [
    &["happy", "smile", "grin", "joy", "cheerful"],
    &["sad", "tears", "crying", "sob", "gloomy"],
    &["angry", "mad", "furious", "rage", "grumpy"],
    &["sleepy", "yawn", "tired", "nap", "bedtime"],
    &["love", "heart", "kiss", "hug", "sweet"],
];

fn main() -> stickertag::Result<()> {
    let lines: Vec<String> = (0..150)
        .map(|i| {
            let words = THEMES[i % 5];
            format!("{} {} {}", words[i % 5], words[(i / 5) % 5], words[(i / 25 + 2) % 5])
        })
        .collect();
    let corpus = KeywordCorpus::from_lines(lines.iter().map(String::as_str), whitespace_tokens)?;
    let features = tfidf_features(&corpus)?;
    println!("{} entries, {} terms", corpus.len(), features.vocabulary.len());

    let elbow = elbow_search(&features.rows, 2, 12, 1, 0, 4)?;
    for (k, sse) in &elbow.coarse {
        println!("k = {k:>2}  sse = {sse:.3}");
    }
    println!("elbow at k = {}", elbow.k);

    let result = kmeans_cluster(&features.rows, elbow.k, 0, 4)?;
    let report = ClusterReport::new(&corpus, &features, &result, Some(elbow), 5);
    print!("{}", report.worksheet());

    let votes = [["happy", "love"], ["happy", "sad"], ["love", "angry"]].map(|v| v.into_iter().collect());
    let (tags, discuss) = majority_tag(&votes);
    println!("annotators agree on {tags:?}, needs discussion: {discuss}");
    Ok(())
}
