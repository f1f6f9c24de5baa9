//! Training losses.
//!
//! The main loss is the multi-positive softmax loss
//! `-(1/n) Σ_i Σ_{j∈y_i} ln p_ij`, taken from logits through `log_softmax`.
//! The confidence penalty compares the reconstructed-path and original-path
//! probabilities on each item's true tags.
//!
//! Tensor versions drive training; the `*_values` versions work on plain
//! probability rows and are what the logged numbers are checked against.

use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::ops::{log_softmax, softmax};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// `-(1/n) Σ (p^r - p^o)` over true tags.
    #[default]
    Signed,
    /// `(1/n) Σ max(0, p^o - p^r)` over true tags: only confidence drops count.
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LossOptions {
    pub penalty: bool,
    pub mode: PenaltyMode,
    /// Treat the original path as a constant in the penalty.
    pub stop_grad_original: bool,
}

impl LossOptions {
    pub fn with_penalty(mode: PenaltyMode) -> Self {
        Self {
            penalty: true,
            mode,
            stop_grad_original: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub main: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Scalar loss tensors for one batch.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub main: Tensor,
    pub penalty: Option<Tensor>,
    pub total: Tensor,
}

impl LossTerms {
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        let main = scalar(&self.main)?;
        let total = scalar(&self.total)?;
        let penalty = match &self.penalty {
            Some(p) => scalar(p)?,
            None => 0.0,
        };
        Ok(LossBreakdown { main, penalty, total })
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn check_labels(labels: &[BTreeSet<usize>], m: usize) -> Result<()> {
    for (i, set) in labels.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!("item {i} has an empty label set")));
        }
        if let Some(&j) = set.iter().find(|&&j| j >= m) {
            return Err(Error::InvalidArgument(format!("item {i} has tag id {j} outside 0..{m}")));
        }
    }
    Ok(())
}

/// `(n, m)` 0/1 target matrix.
pub fn multi_hot(labels: &[BTreeSet<usize>], m: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    check_labels(labels, m)?;
    let mut data = vec![0f32; labels.len() * m];
    for (i, set) in labels.iter().enumerate() {
        for &j in set {
            data[i * m + j] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (labels.len(), m), device)?.to_dtype(dtype)?)
}

fn check_batch(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidArgument(format!("batch shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Main loss from `(n, m)` logits and a multi-hot target.
pub fn main_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_batch(logits, targets)?;
    let n = logits.dims()[0] as f64;
    let logp = log_softmax(logits, D::Minus1)?;
    Ok(((logp * targets)?.sum_all()? * (-1.0 / n))?)
}

/// Penalty from `(n, m)` probability tensors of the two paths.
pub fn penalty_loss(probs_r: &Tensor, probs_o: &Tensor, targets: &Tensor, mode: PenaltyMode) -> Result<Tensor> {
    check_batch(probs_r, probs_o)?;
    check_batch(probs_r, targets)?;
    let n = probs_r.dims()[0] as f64;
    let diff = (probs_r - probs_o)?;
    let per = match mode {
        PenaltyMode::Signed => diff.neg()?,
        PenaltyMode::Hinge => diff.neg()?.relu()?,
    };
    Ok(((per * targets)?.sum_all()? * (1.0 / n))?)
}

/// Main loss plus (optionally) the penalty, from the logits of both paths.
pub fn total_loss(logits_r: &Tensor, logits_o: Option<&Tensor>, targets: &Tensor, opts: &LossOptions) -> Result<LossTerms> {
    let main = main_loss(logits_r, targets)?;
    if !opts.penalty {
        return Ok(LossTerms {
            total: main.clone(),
            main,
            penalty: None,
        });
    }
    let logits_o = logits_o.ok_or_else(|| Error::InvalidArgument("penalty needs the original path".into()))?;
    let probs_r = softmax(logits_r, D::Minus1)?;
    let mut probs_o = softmax(logits_o, D::Minus1)?;
    if opts.stop_grad_original {
        probs_o = probs_o.detach();
    }
    let penalty = penalty_loss(&probs_r, &probs_o, targets, opts.mode)?;
    Ok(LossTerms {
        total: (&main + &penalty)?,
        main,
        penalty: Some(penalty),
    })
}

fn check_rows(a: &[Vec<f64>], labels: &[BTreeSet<usize>]) -> Result<()> {
    if a.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} distributions for {} label sets", a.len(), labels.len())));
    }
    check_labels(labels, a.first().map_or(0, Vec::len))
}

/// Main loss over probability rows.
pub fn main_loss_values(probs: &[Vec<f64>], labels: &[BTreeSet<usize>]) -> Result<f64> {
    check_rows(probs, labels)?;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| y.iter().map(|&j| -p[j].ln()).sum::<f64>())
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Penalty over probability rows.
pub fn penalty_values(probs_r: &[Vec<f64>], probs_o: &[Vec<f64>], labels: &[BTreeSet<usize>], mode: PenaltyMode) -> Result<f64> {
    check_rows(probs_r, labels)?;
    if probs_o.len() != probs_r.len() {
        return Err(Error::InvalidArgument(format!("batch sizes differ: {} vs {}", probs_r.len(), probs_o.len())));
    }
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, y)| {
            y.iter()
                .map(|&j| {
                    let d = probs_r[i][j] - probs_o[i][j];
                    match mode {
                        PenaltyMode::Signed => -d,
                        PenaltyMode::Hinge => (-d).max(0.0),
                    }
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum / labels.len() as f64)
}

pub fn total_values(probs_r: &[Vec<f64>], probs_o: &[Vec<f64>], labels: &[BTreeSet<usize>], opts: &LossOptions) -> Result<LossBreakdown> {
    let main = main_loss_values(probs_r, labels)?;
    let penalty = if opts.penalty {
        penalty_values(probs_r, probs_o, labels, opts.mode)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        main,
        penalty,
        total: main + penalty,
    })
}
