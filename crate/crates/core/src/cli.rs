//! Command-line front end.
//!
//! Every subcommand reads its section of an optional TOML file (`--config`),
//! applies flag overrides, prints the effective configuration to stderr and
//! runs. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::adg::{self, ChatClient, DescribeOptions, DescriptionCache, HttpChatClient, StubChatClient};
use crate::data::{self, load_manifest, LoadOptions, StickerImage, SynthConfig};
use crate::metrics::DEFAULT_KS;
use crate::objective::PenaltyMode;
use crate::tagset::{self, ClusterReport, KeywordCorpus};
use crate::trainer::{self, Bundle, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "stickertag", version, about = "Multi-tag sticker recognition")]
pub struct Cli {
    /// TOML file with [synth], [describe], [tagset], [train], [eval] and [predict] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sticker corpus with manifest and vocabulary.
    Synth(SynthArgs),
    /// Generate attribute descriptions into the cache.
    Describe(DescribeArgs),
    /// Cluster a keyword corpus and write a naming worksheet.
    Tagset(TagsetArgs),
    /// Train a tagger.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Print the top tags for one image.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tags: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub client: Option<ClientKind>,
    /// Model name sent to the chat endpoint.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TagsetArgs {
    /// Keyword corpus, one entry per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cluster at this k and skip the elbow search.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub penalty_mode: Option<PenaltyArg>,
    #[arg(long)]
    pub no_lor: bool,
    #[arg(long)]
    pub no_prompt: bool,
    #[arg(long)]
    pub no_penalty: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PenaltyArg {
    Signed,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
    /// Comma-separated top-k values.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub topc: Option<usize>,
    /// Description cache to look the image up in (by file stem).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Client used when the cache has no record.
    #[arg(long, value_enum)]
    pub client: Option<ClientKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub out: PathBuf,
    pub seed: u64,
    #[serde(flatten)]
    pub synth: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            out: PathBuf::from("synth"),
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescribeSection {
    pub manifest: PathBuf,
    pub vocab: PathBuf,
    pub cache: PathBuf,
    pub client: ClientKind,
    pub model: String,
    pub parallel: usize,
    pub retries: usize,
}

impl Default for DescribeSection {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("synth/manifest.jsonl"),
            vocab: PathBuf::from("synth/vocab.txt"),
            cache: PathBuf::from("descriptions.jsonl"),
            client: ClientKind::Stub,
            model: "gpt-4o".into(),
            parallel: 1,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TagsetSection {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub step: usize,
    pub restarts: usize,
    pub seed: u64,
    pub top_terms: usize,
}

impl Default for TagsetSection {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("keywords.txt"),
            out: PathBuf::from("tagset"),
            k: None,
            k_min: 2,
            k_max: 12,
            step: 1,
            restarts: 4,
            seed: 0,
            top_terms: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub manifest: PathBuf,
    pub vocab: PathBuf,
    pub cache: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DescribeSection::default();
        Self {
            manifest: d.manifest,
            vocab: d.vocab,
            cache: d.cache,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub data: DataSection,
    pub out: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            out: PathBuf::from("run"),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    #[serde(flatten)]
    pub data: DataSection,
    pub checkpoint: PathBuf,
    pub split: SplitName,
    pub ks: Vec<usize>,
    pub out: Option<PathBuf>,
    /// Split seed; defaults to the checkpoint's training seed.
    pub seed: Option<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            checkpoint: PathBuf::from("run/best.safetensors"),
            split: SplitName::Test,
            ks: DEFAULT_KS.to_vec(),
            out: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictSection {
    pub checkpoint: PathBuf,
    pub image: Option<PathBuf>,
    pub topc: usize,
    pub cache: Option<PathBuf>,
    pub client: ClientKind,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("run/best.safetensors"),
            image: None,
            topc: 3,
            cache: None,
            client: ClientKind::Stub,
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SynthSection,
    pub describe: DescribeSection,
    pub tagset: TagsetSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub predict: PredictSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn echo<T: Serialize>(name: &str, section: &T) -> Result<()> {
    let text = toml::to_string(section).map_err(|e| Error::Config(e.to_string()))?;
    eprintln!("# effective {name} configuration\n{text}");
    Ok(())
}

fn apply_data(section: &mut DataSection, args: DataArgs) {
    set(&mut section.manifest, args.manifest);
    set(&mut section.vocab, args.vocab);
    set(&mut section.cache, args.cache);
}

fn cmd_synth(mut s: SynthSection, args: SynthArgs, seed: Option<u64>) -> Result<()> {
    set(&mut s.out, args.out);
    set(&mut s.synth.n, args.n);
    set(&mut s.synth.num_tags, args.tags);
    if let Some(size) = args.size {
        s.synth.height = size;
        s.synth.width = size;
    }
    set(&mut s.seed, seed);
    echo("synth", &s)?;
    let (ds, manifest, vocab) = data::generate_synthetic_to(&s.synth, s.seed, &s.out)?;
    println!("wrote {} stickers: {} {}", ds.len(), manifest.display(), vocab.display());
    Ok(())
}

fn make_client(kind: ClientKind, model: &str) -> Result<Box<dyn ChatClient>> {
    Ok(match kind {
        ClientKind::Stub => Box::new(StubChatClient::new()),
        ClientKind::Http => Box::new(HttpChatClient::from_env(model)?),
    })
}

fn cmd_describe(mut s: DescribeSection, args: DescribeArgs) -> Result<()> {
    set(&mut s.manifest, args.manifest);
    set(&mut s.vocab, args.vocab);
    set(&mut s.cache, args.cache);
    set(&mut s.client, args.client);
    set(&mut s.model, args.model);
    set(&mut s.parallel, args.parallel);
    set(&mut s.retries, args.retries);
    echo("describe", &s)?;
    let client = make_client(s.client, &s.model)?;
    let ds = load_manifest(&s.manifest, &s.vocab, LoadOptions::NATIVE)?;
    let cache = DescriptionCache::open(&s.cache)?;
    let stickers: Vec<&StickerImage> = ds.items.iter().map(|i| &i.image).collect();
    let summary = adg::describe_all(&stickers, client.as_ref(), &cache, DescribeOptions { retries: s.retries }, s.parallel)?;
    println!(
        "{} cached, {} generated, {} fallbacks -> {}",
        summary.cached,
        summary.generated,
        summary.fallbacks,
        s.cache.display()
    );
    Ok(())
}

fn cmd_tagset(mut s: TagsetSection, args: TagsetArgs, seed: Option<u64>) -> Result<()> {
    set(&mut s.corpus, args.corpus);
    set(&mut s.out, args.out);
    if args.k.is_some() {
        s.k = args.k;
    }
    set(&mut s.k_min, args.k_min);
    set(&mut s.k_max, args.k_max);
    set(&mut s.step, args.step);
    set(&mut s.restarts, args.restarts);
    set(&mut s.seed, seed);
    echo("tagset", &s)?;
    let corpus = KeywordCorpus::load(&s.corpus)?;
    let features = tagset::tfidf_features(&corpus)?;
    let (k, elbow) = match s.k {
        Some(k) => (k, None),
        None => {
            let k_max = s.k_max.min(corpus.len());
            let e = tagset::elbow_search(&features.rows, s.k_min, k_max, s.step, s.seed, s.restarts)?;
            if e.no_knee {
                eprintln!("warning: no knee in the SSE curve, using k = {}", e.k);
            }
            (e.k, Some(e))
        }
    };
    let result = tagset::kmeans_cluster(&features.rows, k, s.seed, s.restarts)?;
    let report = ClusterReport::new(&corpus, &features, &result, elbow, s.top_terms);
    std::fs::create_dir_all(&s.out).map_err(|e| Error::io(&s.out, e))?;
    let report_path = s.out.join("clusters.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&report_path, e))?;
    let sheet_path = s.out.join("worksheet.txt");
    std::fs::write(&sheet_path, report.worksheet()).map_err(|e| Error::io(&sheet_path, e))?;
    println!("k = {k}, sse = {:.4}: {} {}", result.sse, report_path.display(), sheet_path.display());
    Ok(())
}

fn load_split(data: &DataSection, cfg: &TrainConfig) -> Result<(data::Dataset, data::Dataset, data::Dataset)> {
    let ds = load_manifest(
        &data.manifest,
        &data.vocab,
        LoadOptions {
            height: cfg.model.height,
            width: cfg.model.width,
        },
    )?;
    data::split_dataset(&ds, cfg.split.as_tuple(), cfg.seed)
}

fn cmd_train(mut s: TrainSection, args: TrainArgs, seed: Option<u64>) -> Result<()> {
    apply_data(&mut s.data, args.data);
    set(&mut s.out, args.out);
    let t = &mut s.train;
    set(&mut t.epochs, args.epochs);
    set(&mut t.lr, args.lr);
    set(&mut t.batch_size, args.batch_size);
    set(&mut t.mask_ratio, args.mask_ratio);
    set(&mut t.seed, seed);
    if let Some(p) = args.penalty_mode {
        t.penalty_mode = match p {
            PenaltyArg::Signed => PenaltyMode::Signed,
            PenaltyArg::Hinge => PenaltyMode::Hinge,
        };
    }
    t.ablations.no_lor |= args.no_lor;
    t.ablations.no_prompt |= args.no_prompt;
    t.ablations.no_penalty |= args.no_penalty;
    t.validate()?;
    echo("train", &s)?;
    let (train, val, _) = load_split(&s.data, &s.train)?;
    let cache = DescriptionCache::open(&s.data.cache)?;
    let out = trainer::train(&s.train, &train, &val, &cache, &s.out)?;
    println!("best: {}\nlast: {}\nlog: {}", out.best.display(), out.last.display(), out.log.display());
    Ok(())
}

fn cmd_eval(mut s: EvalSection, args: EvalArgs, seed: Option<u64>) -> Result<()> {
    apply_data(&mut s.data, args.data);
    set(&mut s.checkpoint, args.checkpoint);
    set(&mut s.split, args.split);
    set(&mut s.ks, args.ks);
    if args.out.is_some() {
        s.out = args.out;
    }
    if seed.is_some() {
        s.seed = seed;
    }
    echo("eval", &s)?;
    let (bundle, _) = Bundle::load(&s.checkpoint, &Device::Cpu)?;
    let mut cfg = bundle.config.clone();
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    let (train, val, test) = load_split(&s.data, &cfg)?;
    let ds = match s.split {
        SplitName::Train => train,
        SplitName::Val => val,
        SplitName::Test => test,
        SplitName::All => load_manifest(
            &s.data.manifest,
            &s.data.vocab,
            LoadOptions {
                height: cfg.model.height,
                width: cfg.model.width,
            },
        )?,
    };
    let cache = DescriptionCache::open(&s.data.cache)?;
    let report = trainer::evaluate(&s.checkpoint, &ds, &cache, &s.ks)?;
    match &s.out {
        Some(path) => {
            report.write(path)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", report.to_json()?),
    }
    Ok(())
}

fn cmd_predict(mut s: PredictSection, args: PredictArgs) -> Result<()> {
    set(&mut s.checkpoint, args.checkpoint);
    if args.image.is_some() {
        s.image = args.image;
    }
    set(&mut s.topc, args.topc);
    if args.cache.is_some() {
        s.cache = args.cache;
    }
    set(&mut s.client, args.client);
    echo("predict", &s)?;
    let image = s.image.clone().ok_or_else(|| Error::Config("predict needs --image".into()))?;
    let (bundle, _) = Bundle::load(&s.checkpoint, &Device::Cpu)?;
    let cfg = bundle.model.config();
    let id = image.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    let sticker = data::load_image(&id, &image, LoadOptions { height: cfg.height, width: cfg.width })?;
    let cache = match &s.cache {
        Some(p) => DescriptionCache::open(p)?,
        None => DescriptionCache::in_memory(),
    };
    let client = make_client(s.client, &DescribeSection::default().model)?;
    let desc = adg::describe(&sticker, client.as_ref(), &cache, DescribeOptions::default())?;
    let pred = trainer::predict_one(&bundle, &sticker, &desc, s.topc)?;
    for &j in &pred.topc {
        println!("{}\t{:.4}", bundle.vocabulary.tag(j).unwrap_or("?"), pred.probs.probs[j]);
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(file.synth, a, cli.seed),
        Command::Describe(a) => cmd_describe(file.describe, a),
        Command::Tagset(a) => cmd_tagset(file.tagset, a, cli.seed),
        Command::Train(a) => cmd_train(file.train, a, cli.seed),
        Command::Eval(a) => cmd_eval(file.eval, a, cli.seed),
        Command::Predict(a) => cmd_predict(file.predict, a),
    }
}

/// Exit code for a finished run.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_usage() => 2,
        Err(_) => 1,
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = run(cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
