//! The `stickertag` binary end to end on a tiny corpus.

use std::path::Path;
use std::process::{Command, Output};

fn stickertag(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stickertag"))
        .args(args)
        .current_dir(dir)
        .env_remove("STICKERTAG_CHAT_URL")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = r#"
[train]
epochs = 1
batch_size = 4
eval_batch = 16

[train.model]
d_model = 32
encoder_layers = 1
encoder_heads = 2
fusion_layers = 1
fusion_heads = 2
mlp_dim = 64

[train.model.text]
dim = 16
layers = 1
heads = 2
mlp_dim = 32
"#;

#[test]
fn synth_describe_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();

    ok(&stickertag(&["synth", "--out", "corpus", "--n", "30", "--tags", "4", "--seed", "1"], d));
    let manifest = std::fs::read(d.join("corpus/manifest.jsonl")).unwrap();
    assert_eq!(manifest.iter().filter(|&&b| b == b'\n').count(), 30);
    ok(&stickertag(&["synth", "--out", "again", "--n", "30", "--tags", "4", "--seed", "1"], d));
    assert_eq!(manifest, std::fs::read(d.join("again/manifest.jsonl")).unwrap());

    let data = ["--manifest", "corpus/manifest.jsonl", "--vocab", "corpus/vocab.txt", "--cache", "desc.jsonl"];
    let first = ok(&stickertag(&[&["describe"][..], &data].concat(), d));
    assert!(first.starts_with("0 cached, 30 generated"), "{first}");
    let second = ok(&stickertag(&[&["describe"][..], &data].concat(), d));
    assert!(second.starts_with("30 cached, 0 generated"), "{second}");

    let train = stickertag(&[&["--config", "tiny.toml", "train", "--out", "run", "--no-lor"][..], &data].concat(), d);
    ok(&train);
    let echoed = String::from_utf8_lossy(&train.stderr);
    assert!(echoed.contains("effective train configuration") && echoed.contains("no_lor = true"), "{echoed}");
    assert!(d.join("run/best.safetensors").exists() && d.join("run/best.safetensors.json").exists());

    let eval = |out: &str| ok(&stickertag(&[&["eval", "--checkpoint", "run/best.safetensors", "--out", out][..], &data].concat(), d));
    eval("r1.json");
    eval("r2.json");
    let r1 = std::fs::read_to_string(d.join("r1.json")).unwrap();
    assert_eq!(r1, std::fs::read_to_string(d.join("r2.json")).unwrap());
    let report: serde_json::Value = serde_json::from_str(&r1).unwrap();
    assert_eq!(report["labels"]["no_lor"], "true");
    assert_eq!(report["n_eval"], 3);

    let printed = ok(&stickertag(
        &["predict", "--checkpoint", "run/best.safetensors", "--image", "corpus/images/syn00000.png", "--topc", "3"],
        d,
    ));
    let probs: Vec<f64> = printed.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(probs.len(), 3);
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(stickertag(&["synth", "--out", "x", "--tags", "1"], d).status.code(), Some(2));
    assert_eq!(stickertag(&["synth", "--bogus"], d).status.code(), Some(2));

    ok(&stickertag(&["synth", "--out", "c", "--n", "4", "--tags", "3"], d));
    let out = stickertag(&["describe", "--manifest", "c/manifest.jsonl", "--vocab", "c/vocab.txt", "--client", "http"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("STICKERTAG_CHAT_URL"));

    std::fs::write(d.join("typo.toml"), "seed = 1\n").unwrap();
    assert_eq!(stickertag(&["--config", "typo.toml", "synth", "--out", "y"], d).status.code(), Some(2));

    std::fs::write(d.join("empty.txt"), "\n").unwrap();
    assert_eq!(stickertag(&["tagset", "--corpus", "empty.txt"], d).status.code(), Some(2));
    assert_eq!(stickertag(&["eval", "--checkpoint", "missing.safetensors"], d).status.code(), Some(1));
}

#[test]
fn tagset_fixed_k_and_elbow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lines: Vec<String> = (0..40)
        .map(|i| ["happy smile joy", "sad tears cry", "angry mad rage", "sleepy yawn nap"][i % 4].split(' ').cycle().skip(i / 4 % 3).take(2).collect::<Vec<_>>().join(" "))
        .collect();
    std::fs::write(d.join("kw.txt"), lines.join("\n")).unwrap();
    ok(&stickertag(&["tagset", "--corpus", "kw.txt", "--out", "fixed", "--k", "5"], d));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("fixed/clusters.json")).unwrap()).unwrap();
    assert_eq!(report["k"], 5);
    assert!(report["elbow"].is_null());

    ok(&stickertag(&["tagset", "--corpus", "kw.txt", "--out", "auto", "--k-min", "2", "--k-max", "10"], d));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("auto/clusters.json")).unwrap()).unwrap();
    assert_eq!(report["elbow"]["coarse"].as_array().unwrap().len(), 9);
    assert!(std::fs::read_to_string(d.join("auto/worksheet.txt")).unwrap().contains("name:"));
}
