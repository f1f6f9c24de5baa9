//! Training, evaluation and checkpoints.
//!
//! Every random choice comes from `TrainConfig::seed`: parameter
//! initialization, epoch shuffles and the per-step masking rounds. With a
//! single thread, two runs of the same config write identical logs.

mod checkpoint;
mod eval;
mod features;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use checkpoint::{sidecar_path, Bundle, CheckpointMeta};
pub use eval::{eval_options, evaluate_features, predict_one, predict_probs, report_labels};
pub use features::Features;

use crate::adg::DescriptionCache;
use crate::data::Dataset;
use crate::lor::mix_seed;
use crate::metrics::{report, MetricsReport, ProbabilityDump, DEFAULT_KS, DEFAULT_THRESHOLD};
use crate::model::{ForwardOptions, ModelConfig, PathKind};
use crate::objective::{multi_hot, total_loss, LossBreakdown, LossOptions, PenaltyMode};
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 3;
const MASK_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Skip local re-attention; both paths see the plain tokens.
    pub no_lor: bool,
    /// Drop the four description prompts from the fused sequence.
    pub no_prompt: bool,
    /// Train on the main loss only.
    pub no_penalty: bool,
}

impl Ablations {
    pub fn name(&self) -> &'static str {
        match (self.no_lor, self.no_prompt, self.no_penalty) {
            (false, false, false) => "full",
            (true, false, false) => "no_lor",
            (false, true, false) => "no_prompt",
            (false, false, true) => "no_penalty",
            _ => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablations: Ablations,
    pub mask_ratio: f64,
    pub penalty_mode: PenaltyMode,
    /// Hold the original path constant inside the penalty.
    pub stop_grad_original: bool,
    /// Weight of an auxiliary masked-patch L1 reconstruction loss; 0 disables it.
    pub recon_weight: f64,
    pub split: SplitRatios,
    /// Masking seed used for every evaluation.
    pub eval_seed: u64,
    /// Path whose distribution is reported.
    pub eval_path: PathKind,
    pub eval_batch: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(12)
    }
}

impl TrainConfig {
    /// Small CPU recipe on 64×64 stickers.
    pub fn desk(num_tags: usize) -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 1e-2,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            ablations: Ablations::default(),
            mask_ratio: 0.4,
            penalty_mode: PenaltyMode::Signed,
            stop_grad_original: false,
            recon_weight: 0.0,
            split: SplitRatios::default(),
            eval_seed: 0x5eed,
            eval_path: PathKind::Reconstructed,
            eval_batch: 64,
            model: ModelConfig::desk(num_tags),
        }
    }

    /// Fine-tuning recipe at 224×224.
    pub fn full_scale(num_tags: usize) -> Self {
        Self {
            lr: 1e-5,
            model: ModelConfig::full_scale(num_tags),
            ..Self::desk(num_tags)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio must lie in (0, 1), got {}", self.mask_ratio)));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.weight_decay < 0.0 || self.recon_weight < 0.0 {
            return Err(Error::Config("weight_decay and recon_weight must be non-negative".into()));
        }
        crate::data::split_sizes(10, self.split.as_tuple()).map_err(|e| Error::Config(e.to_string()))?;
        let mut model = self.model.clone();
        model.num_tags = model.num_tags.max(2);
        model.validate()
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            penalty: !self.ablations.no_penalty,
            mode: self.penalty_mode,
            stop_grad_original: self.stop_grad_original,
        }
    }

    /// Forward options for training step `step`.
    pub fn train_options(&self, step: u64) -> ForwardOptions {
        ForwardOptions {
            lor: !self.ablations.no_lor,
            prompts: !self.ablations.no_prompt,
            original: !self.ablations.no_penalty,
            mask_ratio: self.mask_ratio,
            mask_seed: mix_seed(mix_seed(self.seed, MASK_STREAM), step),
        }
    }
}

/// Loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_total: f64,
    pub val: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: PathBuf,
    pub best: PathBuf,
    pub log: PathBuf,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn step_line(r: &StepRecord) -> serde_json::Value {
    json!({"kind": "step", "epoch": r.epoch, "step": r.step, "main": r.loss.main, "penalty": r.loss.penalty, "total": r.loss.total})
}

/// Trains on `train`, scoring `val` after every epoch.
///
/// Writes into `out_dir`: `config.json`, `train_log.jsonl`,
/// `val_probs_epoch<N>.bin`, and the `last`/`best` checkpoints (best by
/// validation top-1 CF1). With zero epochs only the initial checkpoint is
/// written, under both names.
pub fn train(cfg: &TrainConfig, train: &Dataset, val: &Dataset, cache: &DescriptionCache, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.vocabulary != val.vocabulary {
        return Err(Error::VocabularyMismatch {
            expected: train.vocabulary.hash(),
            found: val.vocabulary.hash(),
        });
    }
    let device = Device::Cpu;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let bundle = Bundle::init(cfg, train.vocabulary.clone(), &device)?;
    let cfg = bundle.config.clone();
    let config_path = out_dir.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(&cfg)? + "\n").map_err(|e| Error::io(&config_path, e))?;

    let train_feats = Features::build(train, cache, &bundle.text, &cfg.model, &device)?;
    let val_feats = Features::build(val, cache, &bundle.text, &cfg.model, &device)?;
    bundle.model.init_global_prompts(&bundle.model_vars, &train_feats.mean_descriptions()?)?;

    let last = out_dir.join("last.safetensors");
    let best = out_dir.join("best.safetensors");
    let log_path = out_dir.join("train_log.jsonl");
    let log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let mut outcome = TrainOutcome {
        last: last.clone(),
        best: best.clone(),
        log: log_path.clone(),
        steps: Vec::new(),
        epochs: Vec::new(),
    };
    if cfg.epochs == 0 {
        bundle.save(&last, 0, None)?;
        bundle.save(&best, 0, None)?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        return Ok(outcome);
    }

    let mut opt = AdamW::new(
        bundle.model_vars.all_vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    )?;
    let loss_opts = cfg.loss_options();
    let mut order: Vec<usize> = (0..train_feats.len()).collect();
    let mut best_cf1 = f64::NEG_INFINITY;
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, SHUFFLE_STREAM), epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_feats.batch(chunk)?;
            let targets = multi_hot(&train_feats.labels_of(chunk), cfg.model.num_tags, bundle.model.dtype(), &device)?;
            let out = bundle.model.forward_dual(&batch, &cfg.train_options(step))?;
            let terms = total_loss(&out.logits_r, out.logits_o.as_ref(), &targets, &loss_opts)?;
            let objective = match (&out.recon_l1, cfg.recon_weight > 0.0) {
                (Some(l1), true) => (&terms.total + (l1 * cfg.recon_weight)?)?,
                _ => terms.total.clone(),
            };
            opt.backward_step(&objective)?;
            let record = StepRecord {
                epoch,
                step,
                loss: terms.breakdown()?,
            };
            if !record.loss.total.is_finite() {
                return Err(Error::InvalidArgument(format!("loss diverged at step {step}")));
            }
            writeln!(log, "{}", step_line(&record)).map_err(|e| Error::io(&log_path, e))?;
            epoch_total += record.loss.total;
            epoch_steps += 1;
            outcome.steps.push(record);
            step += 1;
        }

        let (val_report, probs) = evaluate_features(&bundle, &val_feats, &DEFAULT_KS)?;
        let dump = ProbabilityDump {
            ids: val_feats.ids.clone(),
            vocab_hash: bundle.vocabulary.hash(),
            probs,
        };
        dump.write(&out_dir.join(format!("val_probs_epoch{epoch}.bin")))?;
        let record = EpochRecord {
            epoch,
            mean_total: epoch_total / epoch_steps as f64,
            val: val_report,
        };
        writeln!(log, "{}", json!({"kind": "epoch", "epoch": epoch, "mean_total": record.mean_total, "metrics": record.val}))
            .map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let cf1 = record.val.top(1).map_or(0.0, |s| s.CF1);
        log::info!("epoch {epoch}: mean loss {:.4}, val top-1 CR {:.2} CF1 {cf1:.2}", record.mean_total, record.val.top(1).map_or(0.0, |s| s.CR));
        if cf1 > best_cf1 {
            best_cf1 = cf1;
            bundle.save(&best, epoch + 1, Some(cf1))?;
        }
        outcome.epochs.push(record);
    }
    bundle.save(&last, cfg.epochs, outcome.epochs.last().and_then(|e| e.val.top(1)).map(|s| s.CF1))?;
    Ok(outcome)
}

/// Scores a saved checkpoint on `ds`, refusing a dataset with another vocabulary.
pub fn evaluate(checkpoint: &Path, ds: &Dataset, cache: &DescriptionCache, ks: &[usize]) -> Result<MetricsReport> {
    let device = Device::Cpu;
    let (bundle, _) = Bundle::load(checkpoint, &device)?;
    bundle.check_vocabulary(&ds.vocabulary)?;
    let feats = Features::build(ds, cache, &bundle.text, bundle.model.config(), &device)?;
    Ok(evaluate_features(&bundle, &feats, ks)?.0)
}

/// Recomputes a report from a saved probability dump.
pub fn replay_dump(dump: &ProbabilityDump, ds: &Dataset, labels_from: &TrainConfig) -> Result<MetricsReport> {
    if dump.vocab_hash != ds.vocabulary.hash() {
        return Err(Error::VocabularyMismatch {
            expected: dump.vocab_hash.clone(),
            found: ds.vocabulary.hash(),
        });
    }
    let by_id: std::collections::HashMap<&str, usize> = ds.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let labels = ds.labels();
    let truths = dump
        .ids
        .iter()
        .map(|id| by_id.get(id.as_str()).map(|&i| labels[i].clone()).ok_or_else(|| Error::InvalidArgument(format!("dump id {id} not in dataset"))))
        .collect::<Result<Vec<_>>>()?;
    let mut r = report(&dump.probs_f64(), &truths, &DEFAULT_KS, DEFAULT_THRESHOLD)?;
    r.labels = report_labels(labels_from);
    Ok(r)
}
