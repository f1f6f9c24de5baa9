use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::KeywordCorpus;
use crate::{Error, Result};

/// Dense tf-idf matrix with a sorted vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdf {
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

/// Raw term counts times the smoothed idf `ln((1+N)/(1+df)) + 1`, each row
/// scaled to unit length.
pub fn tfidf_features(corpus: &KeywordCorpus) -> Result<TfIdf> {
    let vocabulary: Vec<String> = corpus
        .tokens
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if vocabulary.is_empty() {
        return Err(Error::InvalidArgument("keyword corpus has an empty vocabulary".into()));
    }
    let index: BTreeMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let n = corpus.tokens.len() as f64;
    let mut df = vec![0usize; vocabulary.len()];
    for entry in &corpus.tokens {
        for t in entry.iter().map(|t| index[t.as_str()]).collect::<BTreeSet<_>>() {
            df[t] += 1;
        }
    }
    let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
    let mut rows = Vec::with_capacity(corpus.tokens.len());
    for (i, entry) in corpus.tokens.iter().enumerate() {
        let mut row = vec![0.0; vocabulary.len()];
        for t in entry {
            row[index[t.as_str()]] += 1.0;
        }
        for (v, w) in row.iter_mut().zip(&idf) {
            *v *= w;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument(format!("keyword entry {i} has no terms")));
        }
        row.iter_mut().for_each(|v| *v /= norm);
        rows.push(row);
    }
    Ok(TfIdf { vocabulary, idf, rows })
}
