//! Multi-label evaluation.
//!
//! Per-class (macro) precision and recall are means of per-tag ratios; overall
//! (micro) figures pool counts across tags. F1 is the harmonic mean of the
//! aggregated precision and recall. Any ratio with a zero denominator is 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::ranked;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    TopK(usize),
    /// Tags whose probability is strictly above the threshold.
    Threshold(f64),
}

pub fn select_predictions(probs: &[Vec<f64>], mode: Selection) -> Result<Vec<BTreeSet<usize>>> {
    match mode {
        Selection::TopK(k) => {
            if let Some(row) = probs.iter().find(|r| k == 0 || k > r.len()) {
                return Err(Error::InvalidArgument(format!("top-k must lie in 1..={}, got {k}", row.len())));
            }
            Ok(probs.iter().map(|r| ranked(r).into_iter().take(k).collect()).collect())
        }
        Selection::Threshold(t) => {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {t}")));
            }
            Ok(probs
                .iter()
                .map(|r| r.iter().enumerate().filter(|(_, &p)| p > t).map(|(j, _)| j).collect())
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Per-tag true positive, false positive and false negative counts.
pub fn confusion_counts(preds: &[BTreeSet<usize>], truths: &[BTreeSet<usize>], m: usize) -> Result<Vec<ClassCounts>> {
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let mut counts = vec![ClassCounts::default(); m];
    for (p, t) in preds.iter().zip(truths) {
        for &j in p.union(t) {
            let c = counts
                .get_mut(j)
                .ok_or_else(|| Error::InvalidArgument(format!("tag id {j} outside 0..{m}")))?;
            match (p.contains(&j), t.contains(&j)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                _ => c.fn_ += 1,
            }
        }
    }
    Ok(counts)
}

/// The six headline numbers, as percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Scores {
    pub CP: f64,
    pub CR: f64,
    pub CF1: f64,
    pub OP: f64,
    pub OR: f64,
    pub OF1: f64,
}

impl Scores {
    pub fn values(&self) -> [f64; 6] {
        [self.CP, self.CR, self.CF1, self.OP, self.OR, self.OF1]
    }

    fn rounded(self) -> Self {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        Self {
            CP: r(self.CP),
            CR: r(self.CR),
            CF1: r(self.CF1),
            OP: r(self.OP),
            OR: r(self.OR),
            OF1: r(self.OF1),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn aggregate(counts: &[ClassCounts]) -> Scores {
    let m = counts.len().max(1) as f64;
    let cp = counts.iter().map(|c| ratio(c.tp, c.tp + c.fp)).sum::<f64>() / m;
    let cr = counts.iter().map(|c| ratio(c.tp, c.tp + c.fn_)).sum::<f64>() / m;
    let tp: u64 = counts.iter().map(|c| c.tp).sum();
    let fp: u64 = counts.iter().map(|c| c.fp).sum();
    let fn_: u64 = counts.iter().map(|c| c.fn_).sum();
    let op = ratio(tp, tp + fp);
    let or = ratio(tp, tp + fn_);
    Scores {
        CP: 100.0 * cp,
        CR: 100.0 * cr,
        CF1: 100.0 * harmonic(cp, cr),
        OP: 100.0 * op,
        OR: 100.0 * or,
        OF1: 100.0 * harmonic(op, or),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Keyed by k.
    pub per_k: BTreeMap<usize, Scores>,
    pub threshold: f64,
    pub threshold_mode: Scores,
    pub n_eval: usize,
    /// Free-form labels such as ablation flags or the evaluated path.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn top(&self, k: usize) -> Option<&Scores> {
        self.per_k.get(&k)
    }

    /// Every reported number, k-major then threshold mode.
    pub fn values(&self) -> Vec<f64> {
        self.per_k
            .values()
            .chain(std::iter::once(&self.threshold_mode))
            .flat_map(|s| s.values())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Top-k and threshold scores, rounded to two decimals. `k` values larger
/// than the number of tags are skipped.
pub fn report(probs: &[Vec<f64>], truths: &[BTreeSet<usize>], ks: &[usize], threshold: f64) -> Result<MetricsReport> {
    let m = probs.first().map_or(0, Vec::len);
    let score = |sel| -> Result<Scores> {
        let preds = select_predictions(probs, sel)?;
        Ok(aggregate(&confusion_counts(&preds, truths, m)?).rounded())
    };
    let mut per_k = BTreeMap::new();
    for &k in ks.iter().filter(|&&k| k <= m) {
        per_k.insert(k, score(Selection::TopK(k))?);
    }
    Ok(MetricsReport {
        per_k,
        threshold,
        threshold_mode: score(Selection::Threshold(threshold))?,
        n_eval: probs.len(),
        labels: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DumpHeader {
    n: usize,
    m: usize,
    vocab_hash: String,
    ids: Vec<String>,
}

/// Probabilities saved for later replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDump {
    pub ids: Vec<String>,
    pub vocab_hash: String,
    pub probs: Vec<Vec<f32>>,
}

impl ProbabilityDump {
    /// Layout: little-endian `u32` header length, a JSON header
    /// `{n, m, vocab_hash, ids}`, then `n·m` little-endian `f32` values.
    pub fn write(&self, path: &Path) -> Result<()> {
        let m = self.probs.first().map_or(0, Vec::len);
        if self.probs.len() != self.ids.len() || self.probs.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("ragged probability dump".into()));
        }
        let header = serde_json::to_vec(&DumpHeader {
            n: self.probs.len(),
            m,
            vocab_hash: self.vocab_hash.clone(),
            ids: self.ids.clone(),
        })?;
        let mut buf = Vec::with_capacity(4 + header.len() + 4 * m * self.probs.len());
        buf.extend((header.len() as u32).to_le_bytes());
        buf.extend(header);
        for v in self.probs.iter().flatten() {
            buf.extend(v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = || Error::InvalidArgument(format!("{} is not a probability dump", path.display()));
        let len = u32::from_le_bytes(bytes.get(..4).ok_or_else(bad)?.try_into().unwrap()) as usize;
        let header: DumpHeader = serde_json::from_slice(bytes.get(4..4 + len).ok_or_else(bad)?)?;
        let body = &bytes[4 + len..];
        if body.len() != 4 * header.n * header.m || header.ids.len() != header.n {
            return Err(bad());
        }
        let values: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let probs = if header.m == 0 {
            vec![Vec::new(); header.n]
        } else {
            values.chunks(header.m).map(<[f32]>::to_vec).collect()
        };
        Ok(Self {
            ids: header.ids,
            vocab_hash: header.vocab_hash,
            probs,
        })
    }

    pub fn probs_f64(&self) -> Vec<Vec<f64>> {
        self.probs.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    }
}
