//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails.
//!
//! The end-to-end desk run (criterion 5) trains four models for 20 epochs and
//! dominates the runtime.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes straight to stderr so results show even when the harness captures
/// test output.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stderr(), $($arg)*);
    }};
}

use stickertag::adg::{describe_all, DescribeOptions, DescriptionCache, StubChatClient};
use stickertag::data::{generate_synthetic, split_dataset, write_manifest, Dataset, SynthConfig};
use stickertag::lor::{corrupt, patchify, patch_similarity, renewed_attention, sample_mask_rounds};
use stickertag::metrics::{aggregate, confusion_counts, select_predictions, Selection};
use stickertag::model::{Batch, ForwardOptions, ModelConfig, StickerTagger};
use stickertag::objective::{main_loss, multi_hot, penalty_values, total_loss, LossOptions, PenaltyMode};
use stickertag::tagset::{elbow_search, elbow_search_with, majority_tag, tfidf_features, whitespace_tokens, KeywordCorpus};
use stickertag::trainer::{evaluate, evaluate_features, train, Ablations, Bundle, Features, TrainConfig, TrainOutcome};
use stickertag::adg::TextEncoderConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1. metrics

/// Straight-line reference: explicit 0/1 matrices and per-class loops.
fn brute_metrics(probs: &[Vec<f64>], truths: &[BTreeSet<usize>], sel: Selection) -> [f64; 6] {
    let n = probs.len();
    let m = probs[0].len();
    let mut pred = vec![vec![false; m]; n];
    for i in 0..n {
        for j in 0..m {
            pred[i][j] = match sel {
                Selection::TopK(k) => {
                    let ahead = (0..m).filter(|&l| probs[i][l] > probs[i][j] || (probs[i][l] == probs[i][j] && l < j)).count();
                    ahead < k
                }
                Selection::Threshold(t) => probs[i][j] > t,
            };
        }
    }
    let (mut cp, mut cr) = (0.0, 0.0);
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    for j in 0..m {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let truth = truths[i].contains(&j);
            if pred[i][j] && truth {
                tp += 1.0;
            } else if pred[i][j] {
                fp += 1.0;
            } else if truth {
                fneg += 1.0;
            }
        }
        if tp + fp > 0.0 {
            cp += tp / (tp + fp);
        }
        if tp + fneg > 0.0 {
            cr += tp / (tp + fneg);
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    cp /= m as f64;
    cr /= m as f64;
    let op = if tp_all + fp_all > 0.0 { tp_all / (tp_all + fp_all) } else { 0.0 };
    let or = if tp_all + fn_all > 0.0 { tp_all / (tp_all + fn_all) } else { 0.0 };
    let f1 = |p: f64, r: f64| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    [cp, cr, f1(cp, cr), op, or, f1(op, or)].map(|v| 100.0 * v)
}

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (n, m) = (20, 8);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(3)).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|v| v / z).collect()
            })
            .collect();
        let truths: Vec<BTreeSet<usize>> = (0..n)
            .map(|_| {
                let k = rng.random_range(1..=3);
                (0..k).map(|_| rng.random_range(0..m)).collect()
            })
            .collect();
        for sel in [Selection::TopK(1), Selection::TopK(3), Selection::TopK(5), Selection::Threshold(0.5)] {
            let preds = select_predictions(&probs, sel).unwrap();
            let got = aggregate(&confusion_counts(&preds, &truths, m).unwrap()).values();
            let want = brute_metrics(&probs, &truths, sel);
            for (a, b) in got.iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-9 && secs < 10.0, format!("max |diff| {worst:.2e} over 200 instances x 4 modes in {secs:.2}s"))
}

// ------------------------------------------------------------------- 2. loss

fn t2(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_vec(rows.concat(), (rows.len(), rows[0].len()), &Device::Cpu).unwrap()
}

fn criterion_loss() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_multi: f64 = 0.0;
    let mut worst_ce: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..9);
        let m = rng.random_range(2..13);
        let logits: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-6.0..6.0)).collect()).collect();
        let labels: Vec<BTreeSet<usize>> = (0..n)
            .map(|_| {
                let k = rng.random_range(1..=m.min(4));
                (0..k).map(|_| rng.random_range(0..m)).collect()
            })
            .collect();
        let mut oracle = 0.0;
        for (row, y) in logits.iter().zip(&labels) {
            let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            for &j in y {
                oracle += lse - row[j];
            }
        }
        oracle /= n as f64;
        let targets = multi_hot(&labels, m, DType::F64, &dev).unwrap();
        let got = main_loss(&t2(&logits), &targets).unwrap().to_scalar::<f64>().unwrap();
        worst_multi = worst_multi.max((got - oracle).abs());

        let single: Vec<BTreeSet<usize>> = (0..n).map(|_| [rng.random_range(0..m)].into()).collect();
        let ids = Tensor::from_vec(single.iter().map(|s| *s.first().unwrap() as u32).collect::<Vec<_>>(), n, &dev).unwrap();
        let ce = candle_nn::loss::cross_entropy(&t2(&logits), &ids).unwrap().to_scalar::<f64>().unwrap();
        let got = main_loss(&t2(&logits), &multi_hot(&single, m, DType::F64, &dev).unwrap()).unwrap().to_scalar::<f64>().unwrap();
        worst_ce = worst_ce.max((got - ce).abs());
    }
    let uniform = t2(&[vec![0.0; 4]]);
    let one = main_loss(&uniform, &multi_hot(&[[1].into()], 4, DType::F64, &dev).unwrap()).unwrap().to_scalar::<f64>().unwrap();
    let two = main_loss(&uniform, &multi_hot(&[[0, 3].into()], 4, DType::F64, &dev).unwrap()).unwrap().to_scalar::<f64>().unwrap();
    let closed = (one - 4f64.ln()).abs().max((two - 2.0 * 4f64.ln()).abs());
    let pass = worst_multi <= 1e-7 && worst_ce <= 1e-7 && closed <= 1e-6;
    outcome(
        pass,
        format!("multi-positive {worst_multi:.1e}, single-label vs cross-entropy {worst_ce:.1e}, uniform closed forms {closed:.1e}"),
    )
}

// ----------------------------------------------------------- 3. gradients

fn tiny_config() -> ModelConfig {
    ModelConfig {
        height: 8,
        width: 8,
        patch_size: 4,
        d_model: 16,
        encoder_layers: 1,
        encoder_heads: 2,
        fusion_layers: 1,
        fusion_heads: 2,
        mlp_dim: 32,
        num_tags: 5,
        text: TextEncoderConfig { dim: 8, layers: 1, heads: 2, mlp_dim: 16, ..Default::default() },
        ..ModelConfig::desk(5)
    }
}

fn var_values(vars: &VarMap, name: &str) -> (Vec<f64>, Vec<usize>) {
    let data = vars.data().lock().unwrap();
    let t = data[name].as_tensor();
    (t.flatten_all().unwrap().to_vec1().unwrap(), t.dims().to_vec())
}

fn set_var(vars: &VarMap, name: &str, values: Vec<f64>, shape: &[usize]) {
    let data = vars.data().lock().unwrap();
    data[name].set(&Tensor::from_vec(values, shape, &Device::Cpu).unwrap()).unwrap();
}

fn criterion_gradients() -> Outcome {
    let dev = Device::Cpu;
    let cfg = tiny_config();
    let (model, vars) = StickerTagger::seeded(cfg.clone(), 3, DType::F64, &dev).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let px: Vec<f64> = (0..2 * 3 * 8 * 8).map(|_| rng.random_range(0.05..0.95)).collect();
    let desc: Vec<f64> = (0..2 * 4 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Batch {
        images: Tensor::from_vec(px, (2, 3, 8, 8), &dev).unwrap(),
        descriptions: Tensor::from_vec(desc, (2, 4, 8), &dev).unwrap(),
        item_keys: vec![0, 1],
    };
    let targets = multi_hot(&[[1, 3].into(), [4].into()], 5, DType::F64, &dev).unwrap();
    let opts = ForwardOptions { mask_seed: 9, ..Default::default() };
    let loss_opts = LossOptions::with_penalty(PenaltyMode::Signed);
    let loss = || {
        let out = model.forward_dual(&batch, &opts).unwrap();
        total_loss(&out.logits_r, out.logits_o.as_ref(), &targets, &loss_opts).unwrap().total
    };
    let grads = loss().backward().unwrap();

    let mut names: Vec<String> = vars.data().lock().unwrap().keys().cloned().collect();
    names.sort();
    let mut worst = (0.0f64, String::new());
    let mut zero_groups = Vec::new();
    let h = 1e-5;
    for name in &names {
        let analytic: Vec<f64> = {
            let data = vars.data().lock().unwrap();
            grads.get(data[name].as_tensor()).map_or_else(|| vec![0.0; data[name].elem_count()], |g| g.flatten_all().unwrap().to_vec1().unwrap())
        };
        let (base, shape) = var_values(&vars, name);
        let picks: Vec<usize> = if base.len() <= 6 { (0..base.len()).collect() } else { (0..6).map(|i| i * base.len() / 6 + i % 3).collect() };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let mut v = base.clone();
            v[i] = base[i] + h;
            set_var(&vars, name, v.clone(), &shape);
            let up = loss().to_scalar::<f64>().unwrap();
            v[i] = base[i] - h;
            set_var(&vars, name, v, &shape);
            let down = loss().to_scalar::<f64>().unwrap();
            set_var(&vars, name, base.clone(), &shape);
            let numeric = (up - down) / (2.0 * h);
            diff2 += (numeric - analytic[i]).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale < 1e-10 {
            zero_groups.push(name.clone());
            continue;
        }
        let rel = diff2.sqrt() / scale;
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    let norm = |name: &str| {
        let data = vars.data().lock().unwrap();
        grads.get(data[name].as_tensor()).map_or(0.0, |g| g.sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap().sqrt())
    };
    let mask_norm = norm("mask_token");
    let prompt_norm = norm("prompt_proj.0.weight");
    let pass = worst.0 <= 1e-3 && zero_groups.is_empty() && mask_norm > 0.0 && prompt_norm > 0.0;
    outcome(
        pass,
        format!(
            "{} groups, worst relative error {:.2e} ({}), |grad| mask token {mask_norm:.2e}, prompt projection {prompt_norm:.2e}, zero-gradient groups {zero_groups:?}",
            names.len(),
            worst.0,
            worst.1
        ),
    )
}

// ------------------------------------------------------------------- 4. LoR

fn criterion_lor() -> Outcome {
    let start = Instant::now();
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    for draw in 0..1000 {
        let side = rng.random_range(1..=8);
        let n = side * side;
        let ratio = rng.random_range(0.01..0.99);
        let seed: u64 = rng.random();
        let plan = sample_mask_rounds(n, ratio, seed).unwrap();
        if !plan.covers_all() {
            failures.push(format!("draw {draw}: rounds miss a patch"));
        }
        let pixels: Vec<f32> = (0..3 * 4 * side * 4 * side).map(|_| rng.random::<f32>()).collect();
        let image = stickertag::data::StickerImage::new("x", pixels, 3, 4 * side, 4 * side).unwrap();
        let grid = patchify(&image, 4, &dev, DType::F32).unwrap();
        let original: Vec<Vec<f64>> = grid.patches.to_dtype(DType::F64).unwrap().to_vec2().unwrap();
        let predicted: Vec<Vec<f64>> = (0..n).map(|_| (0..48).map(|_| rng.random::<f64>()).collect()).collect();
        let sims: Vec<Vec<f64>> = plan.rounds.iter().map(|_| (0..n).map(|i| patch_similarity(&predicted[i], &original[i])).collect()).collect();
        let w = renewed_attention(&plan, &sims).unwrap();
        if w.weights.iter().any(|v| !(0.0..=1.0).contains(v)) {
            failures.push(format!("draw {draw}: weight outside [0, 1]"));
        }
        let perfect: Vec<Vec<f64>> = plan.rounds.iter().map(|_| (0..n).map(|i| patch_similarity(&original[i], &original[i])).collect()).collect();
        let w = renewed_attention(&plan, &perfect).unwrap();
        if w.weights.iter().any(|&v| v.abs() > 1e-12) {
            failures.push(format!("draw {draw}: perfect reconstruction gives nonzero weight"));
        }
        let token = Tensor::full(0.5f32, 48, &dev).unwrap();
        let same = corrupt(&grid, &BTreeSet::new(), &token).unwrap();
        let a: Vec<Vec<f32>> = same.patches.to_vec2().unwrap();
        let b: Vec<Vec<f32>> = grid.patches.to_vec2().unwrap();
        if a != b {
            failures.push(format!("draw {draw}: empty mask changed the grid"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(failures.is_empty() && secs < 30.0, format!("1000 draws in {secs:.2}s, {} violations {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()))
}

// ------------------------------------------------------ 5, 6. desk run and penalty

struct DeskRun {
    name: &'static str,
    outcome: TrainOutcome,
    test_top1: [f64; 6],
    elapsed: Duration,
}

fn desk_corpus() -> (Dataset, DescriptionCache) {
    let ds = generate_synthetic(&SynthConfig { n: 2000, num_tags: 12, height: 64, width: 64, ..Default::default() }, 2024).unwrap();
    let cache = DescriptionCache::in_memory();
    let stickers: Vec<_> = ds.items.iter().map(|i| &i.image).collect();
    describe_all(&stickers, &StubChatClient::new(), &cache, DescribeOptions::default(), 1).unwrap();
    (ds, cache)
}

fn desk_runs(ds: &Dataset, cache: &DescriptionCache, root: &std::path::Path) -> Vec<DeskRun> {
    let variants = [
        Ablations::default(),
        Ablations { no_lor: true, ..Default::default() },
        Ablations { no_prompt: true, ..Default::default() },
        Ablations { no_penalty: true, ..Default::default() },
    ];
    let mut runs = Vec::new();
    for ablations in variants {
        let cfg = TrainConfig { seed: 2024, ablations, ..TrainConfig::desk(12) };
        let (tr, va, te) = split_dataset(ds, cfg.split.as_tuple(), cfg.seed).unwrap();
        let start = Instant::now();
        let out = train(&cfg, &tr, &va, cache, &root.join(ablations.name())).unwrap();
        let report = evaluate(&out.best, &te, cache, &[1, 3, 5]).unwrap();
        let elapsed = start.elapsed();
        say!("  trained {:<10} in {:>6.1?}: test top-1 CR {:.2}", ablations.name(), elapsed, report.top(1).unwrap().CR);
        runs.push(DeskRun { name: ablations.name(), outcome: out, test_top1: report.top(1).unwrap().values(), elapsed });
    }
    runs
}

fn criterion_desk(runs: &[DeskRun]) -> Outcome {
    let total: Duration = runs.iter().map(|r| r.elapsed).sum();
    say!("  {:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}  {:>10}", "variant", "CP", "CR", "CF1", "OP", "OR", "OF1", "loss drop");
    let mut pass = total <= Duration::from_secs(45 * 60);
    for r in runs {
        let v = r.test_top1;
        let first = r.outcome.epochs.first().map_or(f64::NAN, |e| e.mean_total);
        let last = r.outcome.epochs.last().map_or(f64::NAN, |e| e.mean_total);
        say!(
            "  {:<10} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}  {:>9.1}%",
            r.name, v[0], v[1], v[2], v[3], v[4], v[5], 100.0 * (first - last) / first
        );
        let floor = if r.name == "full" { 40.0 } else { 25.0 };
        pass &= v[1] >= floor;
    }
    outcome(pass, format!("top-1 CR: full >= 40, ablations >= 25; four runs took {:.1} min", total.as_secs_f64() / 60.0))
}

fn criterion_penalty(runs: &[DeskRun]) -> Outcome {
    let no_lor = runs.iter().find(|r| r.name == "no_lor").expect("no_lor run");
    let log = std::fs::read_to_string(&no_lor.outcome.log).unwrap();
    let steps: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["kind"] == "step")
        .collect();
    let nonzero = steps.iter().filter(|v| v["penalty"].as_f64() != Some(0.0)).count();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..8);
        let m = rng.random_range(2..10);
        let dist = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                    let z: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / z).collect()
                })
                .collect()
        };
        let (pr, po) = (dist(&mut rng), dist(&mut rng));
        let labels: Vec<BTreeSet<usize>> = (0..n).map(|_| (0..rng.random_range(1..=m)).map(|_| rng.random_range(0..m)).collect()).collect();
        let a = penalty_values(&pr, &po, &labels, PenaltyMode::Signed).unwrap();
        let b = penalty_values(&po, &pr, &labels, PenaltyMode::Signed).unwrap();
        worst = worst.max((a + b).abs());
    }
    outcome(
        nonzero == 0 && !steps.is_empty() && worst <= 1e-9,
        format!("no_lor: {nonzero} of {} logged steps with nonzero penalty; signed swap residual {worst:.1e}", steps.len()),
    )
}

// ---------------------------------------------------------------- 7. tagset

fn criterion_tagset() -> Outcome {
    // five themes, entries mixing words within a theme only
    let themes = [
        ["happy", "smile", "grin", "joy", "cheer", "glad"],
        ["sad", "tears", "cry", "sob", "gloom", "blue"],
        ["angry", "mad", "furious", "rage", "grumpy", "fume"],
        ["sleepy", "yawn", "tired", "nap", "bed", "doze"],
        ["love", "heart", "kiss", "hug", "sweet", "adore"],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lines: Vec<String> = (0..200)
        .map(|i| {
            let t = &themes[i % 5];
            (0..3).map(|_| t[rng.random_range(0..6)]).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let corpus = KeywordCorpus::from_lines(lines.iter().map(String::as_str), whitespace_tokens).unwrap();
    let features = tfidf_features(&corpus).unwrap();
    let elbow = elbow_search(&features.rows, 2, 12, 1, 7, 4).unwrap();
    let blob_ok = (4..=6).contains(&elbow.k);

    let mut majority_ok = 0;
    let subset = |mask: usize| -> BTreeSet<usize> { (0..3).filter(|b| mask >> b & 1 == 1).collect() };
    for case in 0..512 {
        let sets = [subset(case & 7), subset(case >> 3 & 7), subset(case >> 6 & 7)];
        let mut expect = BTreeSet::new();
        for tag in 0..3 {
            let mut votes = 0;
            for s in &sets {
                if s.contains(&tag) {
                    votes += 1;
                }
            }
            if votes >= 2 {
                expect.insert(tag);
            }
        }
        let (got, discuss) = majority_tag(&sets);
        majority_ok += (got == expect && discuss == expect.is_empty()) as usize;
    }

    // curve with its bend at 437 on a 100..1000 grid
    let mut fine_calls = Vec::new();
    let mut calls = 0;
    let e = elbow_search_with(100, 1000, 100, |k| {
        calls += 1;
        if calls > 10 {
            fine_calls.push(k);
        }
        let k = k as f64;
        Ok(if k <= 437.0 { 5000.0 - 10.0 * k } else { 630.0 - 0.2 * (k - 437.0) })
    })
    .unwrap();
    let confined = e.bracket == Some((400, 500)) && fine_calls.iter().all(|k| (400..=500).contains(k)) && (400..=500).contains(&e.k);

    outcome(
        blob_ok && majority_ok == 512 && confined,
        format!(
            "5-theme corpus elbow k = {}; majority rule {majority_ok}/512; coarse bracket {:?}, {} fine evaluations in it, fine k = {}",
            elbow.k,
            e.bracket,
            fine_calls.len(),
            e.k
        ),
    )
}

// ----------------------------------------------------------- 8. determinism

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n: 120, num_tags: 6, ..Default::default() };
    let a = generate_synthetic(&cfg, 8).unwrap();
    let b = generate_synthetic(&cfg, 8).unwrap();
    let (ma, _) = write_manifest(&a, &dir.path().join("a")).unwrap();
    let (mb, _) = write_manifest(&b, &dir.path().join("b")).unwrap();
    let same_manifest = std::fs::read(&ma).unwrap() == std::fs::read(&mb).unwrap()
        && a.items.iter().zip(&b.items).all(|(x, y)| x.image.checksum() == y.image.checksum());

    let stickers: Vec<_> = a.items.iter().map(|i| &i.image).collect();
    let cache_a = DescriptionCache::open(&dir.path().join("da.jsonl")).unwrap();
    let cache_b = DescriptionCache::open(&dir.path().join("db.jsonl")).unwrap();
    describe_all(&stickers, &StubChatClient::new(), &cache_a, DescribeOptions::default(), 1).unwrap();
    describe_all(&stickers, &StubChatClient::new(), &cache_b, DescribeOptions::default(), 3).unwrap();
    let same_cache = std::fs::read(dir.path().join("da.jsonl")).unwrap() == std::fs::read(dir.path().join("db.jsonl")).unwrap();

    let tcfg = TrainConfig { epochs: 2, seed: 8, ..TrainConfig::desk(6) };
    let (tr, va, te) = split_dataset(&a, tcfg.split.as_tuple(), tcfg.seed).unwrap();
    let r1 = train(&tcfg, &tr, &va, &cache_a, &dir.path().join("r1")).unwrap();
    let r2 = train(&tcfg, &tr, &va, &cache_a, &dir.path().join("r2")).unwrap();
    let same_log = std::fs::read(&r1.log).unwrap() == std::fs::read(&r2.log).unwrap();

    let dev = Device::Cpu;
    let (bundle, _) = Bundle::load(&r1.last, &dev).unwrap();
    let feats = Features::build(&te, &cache_a, &bundle.text, bundle.model.config(), &dev).unwrap();
    let before = evaluate_features(&bundle, &feats, &[1, 3, 5]).unwrap().0;
    let resaved = dir.path().join("resaved.safetensors");
    bundle.save(&resaved, 2, None).unwrap();
    let after = evaluate(&resaved, &te, &cache_a, &[1, 3, 5]).unwrap();
    let drift = before.values().iter().zip(after.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    outcome(
        same_manifest && same_cache && same_log && drift <= 1e-6,
        format!("manifest identical {same_manifest}, cache identical {same_cache}, train log identical {same_log}, save/load metric drift {drift:.1e}"),
    )
}

fn run(id: &str, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    say!(
        "[{}] criterion {id} {name}: {} ({:.1}s)",
        if result.pass { "PASS" } else { "FAIL" },
        result.detail,
        start.elapsed().as_secs_f64()
    );
    result.pass
}

#[test]
fn acceptance() {
    let mut passed = Vec::new();
    passed.push(run("1", "metrics oracle", criterion_metrics));
    passed.push(run("2", "loss correctness", criterion_loss));
    passed.push(run("3", "gradient check", criterion_gradients));
    passed.push(run("4", "LoR invariants", criterion_lor));
    let root = tempfile::tempdir().unwrap();
    let (ds, cache) = desk_corpus();
    let runs = catch_unwind(AssertUnwindSafe(|| desk_runs(&ds, &cache, root.path())));
    match &runs {
        Ok(runs) => {
            passed.push(run("5", "end-to-end desk run", || criterion_desk(runs)));
            passed.push(run("6", "penalty contract", || criterion_penalty(runs)));
        }
        Err(_) => {
            passed.push(run("5", "end-to-end desk run", || outcome(false, "training failed")));
            passed.push(run("6", "penalty contract", || outcome(false, "training failed")));
        }
    }
    passed.push(run("7", "tagset pipeline", criterion_tagset));
    passed.push(run("8", "determinism", criterion_determinism));
    let failed = passed.iter().filter(|p| !**p).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
