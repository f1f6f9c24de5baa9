//! Building a tag vocabulary from a keyword corpus, and reconciling the tags
//! of three annotators.
//!
//! Keywords become tf-idf vectors, k-means groups them, and a two-phase elbow
//! search picks the cluster count. Naming the clusters is left to people; the
//! [`ClusterReport`] worksheet lists the strongest terms of each cluster to
//! help with that.

mod elbow;
mod kmeans;
mod tfidf;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use elbow::{elbow_search, elbow_search_with, knee_of, Elbow, Knee};
pub use kmeans::{kmeans_cluster, ClusterResult, MAX_ITERATIONS};
pub use tfidf::{tfidf_features, TfIdf};

use crate::{Error, Result};

/// Words dropped by [`whitespace_tokens`].
pub const STOP_WORDS: &[&str] = &["a", "an", "and", "the", "of", "to", "in", "is", "it", "on", "for", "with"];

/// Lowercased whitespace tokens with punctuation and stop words removed.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty() && !STOP_WORDS.contains(&w.as_str()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordCorpus {
    /// Original line of each entry.
    pub entries: Vec<String>,
    pub tokens: Vec<Vec<String>>,
}

impl KeywordCorpus {
    /// One entry per non-blank line, tokenized by `tokenize`.
    pub fn from_lines<'a, I, F>(lines: I, tokenize: F) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
        F: Fn(&str) -> Vec<String>,
    {
        let mut entries = Vec::new();
        let mut tokens = Vec::new();
        for line in lines.into_iter().map(str::trim).filter(|l| !l.is_empty()) {
            let toks = tokenize(line);
            if toks.is_empty() {
                return Err(Error::InvalidArgument(format!("keyword entry {line:?} has no tokens after filtering")));
            }
            entries.push(line.to_string());
            tokens.push(toks);
        }
        if entries.is_empty() {
            return Err(Error::InvalidArgument("keyword corpus is empty".into()));
        }
        Ok(Self { entries, tokens })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(text.lines(), whitespace_tokens)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Tags chosen by at least two of three annotators. The flag is set when no
/// tag reaches agreement and the sticker needs discussion.
pub fn majority_tag<T: Ord + Clone>(annotations: &[BTreeSet<T>; 3]) -> (BTreeSet<T>, bool) {
    let [a, b, c] = annotations;
    let agreed: BTreeSet<T> = a
        .intersection(b)
        .chain(a.intersection(c))
        .chain(b.intersection(c))
        .cloned()
        .collect();
    let discuss = agreed.is_empty();
    (agreed, discuss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    pub top_terms: Vec<(String, f64)>,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub elbow: Option<Elbow>,
    pub sse: f64,
    pub assignments: Vec<usize>,
    pub clusters: Vec<ClusterSummary>,
}

impl ClusterReport {
    /// Summarizes a clustering with the `top` heaviest centroid terms and the
    /// first few member entries per cluster.
    pub fn new(corpus: &KeywordCorpus, features: &TfIdf, result: &ClusterResult, elbow: Option<Elbow>, top: usize) -> Self {
        let clusters = (0..result.k)
            .map(|c| {
                let members: Vec<usize> = (0..corpus.len()).filter(|&i| result.assignments[i] == c).collect();
                let centroid = &result.centroids[c];
                let mut order: Vec<usize> = (0..centroid.len()).filter(|&t| centroid[t] > 0.0).collect();
                order.sort_by(|&x, &y| centroid[y].total_cmp(&centroid[x]).then(x.cmp(&y)));
                ClusterSummary {
                    cluster: c,
                    size: members.len(),
                    top_terms: order.iter().take(top).map(|&t| (features.vocabulary[t].clone(), centroid[t])).collect(),
                    examples: members.iter().take(5).map(|&i| corpus.entries[i].clone()).collect(),
                }
            })
            .collect();
        Self {
            k: result.k,
            elbow,
            sse: result.sse,
            assignments: result.assignments.clone(),
            clusters,
        }
    }

    /// Plain-text sheet with a blank name line per cluster.
    pub fn worksheet(&self) -> String {
        let mut out = String::new();
        for c in &self.clusters {
            let terms: Vec<&str> = c.top_terms.iter().map(|(t, _)| t.as_str()).collect();
            out.push_str(&format!("cluster {} ({} keywords)\n", c.cluster, c.size));
            out.push_str(&format!("  terms: {}\n", terms.join(", ")));
            out.push_str(&format!("  examples: {}\n", c.examples.join(" | ")));
            out.push_str("  name: \n\n");
        }
        out
    }
}
