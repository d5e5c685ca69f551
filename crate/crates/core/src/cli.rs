//! Command-line interface. Every command prints JSON lines on stdout and
//! ends with a run manifest; exit codes are 0 (success), 1 (runtime
//! failure) and 2 (usage error).

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{load_dataset, read_pair_rows, Dataset, Record, Schema, Split};
use crate::embeddings::{EmbeddingSource, EmbeddingStore, OovPolicy, DEFAULT_DIM};
use crate::error::Error;
use crate::explain::{explain_pair, render_explanation};
use crate::lim::tokenize;
use crate::metrics::{calibrate_threshold, evaluate, pr_curve, write_pr_csv, MetricsReport};
use crate::model::{
    load_checkpoint, save_checkpoint, toy_gradient_check, Checkpoint, CheckpointMeta, Model, ModelConfig, Variant,
};
use crate::nn::AdamConfig;
use crate::train::{predict_scores, score_split, train_with_observer, TrainConfig};

const HASHED_DEFAULT_DIM: usize = 64;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "cordel", version, about = "Contrastive entity linkage: train, evaluate and apply record-pair matchers")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a matcher and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Score an unlabeled (or labeled) pairs CSV.
    Predict(PredictArgs),
    /// Show the token contrast and weights behind a pair's score.
    Explain(ExplainArgs),
    /// Check analytic gradients against finite differences on toy instances.
    Gradcheck(GradcheckArgs),
    /// Write the sorted token vocabulary of a dataset.
    VocabExtract(VocabArgs),
}

#[derive(Debug, Args, Serialize)]
struct EmbeddingArgs {
    /// Word-vector text file (`token v1 ... vd` per line).
    #[arg(long, env = "CORDEL_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
    /// Use deterministic hashed Gaussian vectors instead of a file.
    #[arg(long)]
    hashed_embeddings: bool,
    /// Embedding dimension [default: 64 hashed, 300 from file].
    #[arg(long)]
    dim: Option<usize>,
    /// Vectors for tokens missing from the file: hashed-gaussian or zero.
    #[arg(long, default_value = "hashed-gaussian", value_parser = parse_oov)]
    oov: OovPolicy,
    #[arg(long, default_value_t = 0)]
    oov_seed: u64,
}

impl EmbeddingArgs {
    fn source(&self) -> Result<EmbeddingSource, CliError> {
        if self.hashed_embeddings {
            Ok(EmbeddingSource::Hashed {
                dim: self.dim.unwrap_or(HASHED_DEFAULT_DIM),
                seed: self.oov_seed,
            })
        } else if let Some(path) = &self.embeddings {
            Ok(EmbeddingSource::File {
                path: path.clone(),
                dim: self.dim.unwrap_or(DEFAULT_DIM),
                oov_policy: self.oov,
                oov_seed: self.oov_seed,
            })
        } else {
            Err(CliError::Usage(
                "no embeddings: pass --embeddings PATH (or set CORDEL_EMBEDDINGS) or --hashed-embeddings".into(),
            ))
        }
    }
}

fn parse_oov(s: &str) -> Result<OovPolicy, String> {
    match s {
        "hashed-gaussian" => Ok(OovPolicy::HashedGaussian),
        "zero" => Ok(OovPolicy::Zero),
        _ => Err(format!("unknown OOV policy {s:?} (expected hashed-gaussian or zero)")),
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Dataset directory (tableA/tableB/train/valid/test, or pairs.csv).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "sum")]
    variant: Variant,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// Seeds initialization, shuffling and (pairs layout) the 3:1:1 split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Store the validation F1-maximizing threshold instead of 0.5.
    #[arg(long)]
    calibrate: bool,
    /// Manifest path [default: <out>.manifest.json].
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Decision threshold [default: the checkpoint's].
    #[arg(long)]
    threshold: Option<f64>,
    /// Split seed for the pairs layout [default: the training seed].
    #[arg(long)]
    split_seed: Option<u64>,
    /// Embedding file replacing the one recorded in the checkpoint.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// PR-curve CSV path [default: <checkpoint>.<split>.pr.csv].
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV with left_*/right_* columns and optional id and label columns.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; pick a pair with --split and --pair-index.
    #[arg(long, conflicts_with = "pairs", required_unless_present = "pairs")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Pairs CSV; without --pair-index every row is explained.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    pair_index: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Emit explanations as JSON instead of text.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GradcheckArgs {
    /// Variant to check [default: all].
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Scale analytic gradients by 1.1 to exercise failure detection.
    #[arg(long, hide = true)]
    inject_fault: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct VocabArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut run = Run::new(&argv);
    match dispatch(cli.command, &mut run) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command, run: &mut Run) -> CliResult<()> {
    match command {
        Command::Train(a) => cmd_train(a, run),
        Command::Eval(a) => cmd_eval(a, run),
        Command::Predict(a) => cmd_predict(a, run),
        Command::Explain(a) => cmd_explain(a, run),
        Command::Gradcheck(a) => cmd_gradcheck(a, run),
        Command::VocabExtract(a) => cmd_vocab_extract(a, run),
    }
}

fn emit(value: Value) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{value}");
}

#[derive(Debug, Clone, Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

/// Everything needed to re-run a command: the exact argument vector, the
/// resolved flags, seeds and digests of every input.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    argv: Vec<String>,
    flags: Value,
    seeds: Value,
    dataset: Option<String>,
    inputs: Vec<InputDigest>,
    /// sha256 over the input digests, in order.
    input_hash: String,
    started_unix: f64,
    finished_unix: f64,
    outputs: Vec<PathBuf>,
}

struct Run {
    argv: Vec<String>,
    started: f64,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
    dataset: Option<String>,
    seeds: Value,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn hash_file_into(hasher: &mut Sha256, path: &Path) -> anyhow::Result<()> {
    let mut file = File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("hashing {}", path.display()))?;
        if n == 0 {
            return Ok(());
        }
        hasher.update(&buf[..n]);
    }
}

/// Content digest of a file, or of a directory's regular files (sorted by
/// name, each framed as `name \0 length \0 bytes`).
fn digest_path(path: &Path) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let len = f.metadata().map(|m| m.len()).unwrap_or(0);
            hasher.update(f.file_name().unwrap_or_default().as_encoded_bytes());
            hasher.update([0]);
            hasher.update(len.to_string().as_bytes());
            hasher.update([0]);
            hash_file_into(&mut hasher, &f)?;
        }
    } else {
        hash_file_into(&mut hasher, path)?;
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    fn new(argv: &[OsString]) -> Self {
        Run {
            argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
            started: unix_now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            dataset: None,
            seeds: json!({}),
        }
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        if path.exists() {
            self.inputs.push(InputDigest {
                path: path.to_path_buf(),
                sha256: digest_path(path)?,
            });
        }
        Ok(())
    }

    fn embeddings_input(&mut self, source: &EmbeddingSource) -> anyhow::Result<()> {
        if let EmbeddingSource::File { path, .. } = source {
            self.input(path)?;
        }
        Ok(())
    }

    /// Prints the manifest and writes it to `explicit`, or next to `primary`.
    fn finish(self, flags: &impl Serialize, explicit: Option<&Path>, primary: Option<&Path>) -> anyhow::Result<()> {
        let mut hasher = Sha256::new();
        for i in &self.inputs {
            hasher.update(i.sha256.as_bytes());
        }
        let command = self.argv.get(1).cloned().unwrap_or_default();
        let manifest = RunManifest {
            tool: "cordel",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: self.argv,
            flags: serde_json::to_value(flags)?,
            seeds: self.seeds,
            dataset: self.dataset,
            inputs: self.inputs,
            input_hash: hex(&hasher.finalize()),
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs: self.outputs,
        };
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| primary.map(|p| PathBuf::from(format!("{}.manifest.json", p.display()))));
        if let Some(path) = &path {
            let text = serde_json::to_string_pretty(&manifest)?;
            std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        emit(json!({"event": "manifest", "path": path, "manifest": manifest}));
        Ok(())
    }
}

fn metrics_event(split: Split, report: &MetricsReport) -> Value {
    let mut v = json!({"event": "metrics", "split": split.to_string(), "summary": report.to_string()});
    if let (Value::Object(map), Ok(Value::Object(fields))) = (&mut v, serde_json::to_value(report)) {
        map.extend(fields);
    }
    v
}

fn check_schema(expected: &[String], found: &Schema) -> Result<(), Error> {
    if expected != found.attributes() {
        return Err(Error::SchemaMismatch {
            expected: expected.to_vec(),
            found: found.attributes().to_vec(),
        });
    }
    Ok(())
}

fn open_store(run: &mut Run, source: &EmbeddingSource) -> anyhow::Result<EmbeddingStore> {
    run.embeddings_input(source)?;
    source.open().context("loading embeddings")
}

fn cmd_train(args: TrainArgs, run: &mut Run) -> CliResult<()> {
    let source = args.embedding.source()?;
    if args.lr == 0.0 {
        eprintln!("warning: --lr 0 leaves every parameter at its initial value");
    }
    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        adam: AdamConfig {
            learning_rate: args.lr,
            ..AdamConfig::default()
        },
    };
    train_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    run.input(&args.data)?;
    run.seeds = json!({"model": args.seed, "shuffle": args.seed, "split": args.seed, "oov": args.embedding.oov_seed});
    let dataset = load_dataset(&args.data, args.seed).context("loading dataset")?;
    run.dataset = Some(dataset.name.clone());
    let store = open_store(run, &source)?;
    let config = ModelConfig::new(args.variant, dataset.schema.len(), store.dim()).with_seed(args.seed);
    let model = Model::new(config)?;
    emit(json!({
        "event": "start", "dataset": dataset.name, "variant": args.variant,
        "parameters": model.num_parameters(),
        "pairs": {"train": dataset.train.len(), "valid": dataset.valid.len(), "test": dataset.test.len()},
    }));

    let started = Instant::now();
    let (model, history) = train_with_observer(model, &dataset, &store, &train_config, |e| {
        let mut v = serde_json::to_value(e).unwrap_or(Value::Null);
        if let Value::Object(map) = &mut v {
            map.insert("event".into(), json!("epoch"));
        }
        emit(v);
    })?;
    let train_secs = started.elapsed().as_secs_f64();

    let mut threshold = 0.5;
    if args.calibrate && !dataset.valid.is_empty() {
        let (scores, labels) = score_split(&model, &store, &dataset.valid)?;
        threshold = calibrate_threshold(&scores, &labels)?.0;
    }
    let metadata = CheckpointMeta {
        epoch: Some(history.best_epoch),
        validation_f1: history.best_valid_f1,
        train_seed: Some(args.seed),
        threshold,
        schema: dataset.schema.attributes().to_vec(),
        embeddings: Some(source),
        dataset: Some(dataset.name.clone()),
    };
    save_checkpoint(&args.out, &model, &metadata)?;
    run.outputs.push(args.out.clone());
    emit(json!({
        "event": "trained", "checkpoint": args.out, "best_epoch": history.best_epoch,
        "best_valid_f1": history.best_valid_f1, "threshold": threshold, "train_secs": train_secs,
    }));

    for split in [Split::Valid, Split::Test] {
        let pairs = dataset.split(split);
        if pairs.is_empty() {
            continue;
        }
        let started = Instant::now();
        let (scores, labels) = score_split(&model, &store, pairs)?;
        let mut report = evaluate(&scores, &labels, threshold)?;
        report.runtime_secs = started.elapsed().as_secs_f64();
        eprintln!("{split}: {report}");
        emit(metrics_event(split, &report));
    }
    let manifest = args.manifest.clone();
    run_finish(run, &args, manifest.as_deref(), Some(&args.out))
}

fn run_finish(run: &mut Run, flags: &impl Serialize, explicit: Option<&Path>, primary: Option<&Path>) -> CliResult<()> {
    let done = std::mem::replace(run, Run::new(&[]));
    done.finish(flags, explicit, primary)?;
    Ok(())
}

struct Loaded {
    checkpoint: Checkpoint,
    store: EmbeddingStore,
}

fn load_for_inference(run: &mut Run, checkpoint: &Path, embeddings: Option<&Path>) -> CliResult<Loaded> {
    run.input(checkpoint)?;
    let checkpoint = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut source = checkpoint
        .metadata
        .embeddings
        .clone()
        .ok_or_else(|| anyhow::anyhow!("checkpoint records no embedding source"))?;
    if let Some(path) = embeddings {
        source = match source {
            EmbeddingSource::File {
                dim,
                oov_policy,
                oov_seed,
                ..
            } => EmbeddingSource::File {
                path: path.to_path_buf(),
                dim,
                oov_policy,
                oov_seed,
            },
            EmbeddingSource::Hashed { .. } => {
                return Err(CliError::Usage("checkpoint uses hashed embeddings; --embeddings does not apply".into()))
            }
        };
    }
    let store = open_store(run, &source)?;
    if store.dim() != checkpoint.model.config().embedding_dim {
        return Err(CliError::Runtime(
            Error::shape("embedding dimension", checkpoint.model.config().embedding_dim, store.dim()).into(),
        ));
    }
    Ok(Loaded { checkpoint, store })
}

fn load_dataset_for(run: &mut Run, data: &Path, split_seed: Option<u64>, meta: &CheckpointMeta) -> CliResult<Dataset> {
    run.input(data)?;
    let seed = split_seed.or(meta.train_seed).unwrap_or(0);
    run.seeds = json!({"split": seed});
    let dataset = load_dataset(data, seed).context("loading dataset")?;
    check_schema(&meta.schema, &dataset.schema)?;
    run.dataset = Some(dataset.name.clone());
    Ok(dataset)
}

fn cmd_eval(args: EvalArgs, run: &mut Run) -> CliResult<()> {
    let Loaded { checkpoint, store } = load_for_inference(run, &args.checkpoint, args.embeddings.as_deref())?;
    let dataset = load_dataset_for(run, &args.data, args.split_seed, &checkpoint.metadata)?;
    let pairs = dataset.split(args.split);
    if pairs.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!("split {} of {} is empty", args.split, dataset.name)));
    }
    let threshold = args.threshold.unwrap_or(checkpoint.metadata.threshold);
    let started = Instant::now();
    let (scores, labels) = score_split(&checkpoint.model, &store, pairs)?;
    let mut report = evaluate(&scores, &labels, threshold)?;
    report.runtime_secs = started.elapsed().as_secs_f64();
    eprintln!("{}: {report}", args.split);
    emit(metrics_event(args.split, &report));

    let pr_path = args
        .pr_csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.{}.pr.csv", args.checkpoint.display(), args.split)));
    match pr_curve(&scores, &labels) {
        Ok(curve) => {
            write_pr_csv(&pr_path, &curve)?;
            run.outputs.push(pr_path.clone());
            emit(json!({"event": "pr-curve", "path": pr_path, "points": curve.points.len()}));
        }
        Err(Error::NoPositiveLabels) => eprintln!("warning: no positive labels; PR curve not written"),
        Err(e) => return Err(e.into()),
    }
    let manifest = args.manifest.clone();
    run_finish(run, &args, manifest.as_deref(), Some(&pr_path))
}

fn cmd_predict(args: PredictArgs, run: &mut Run) -> CliResult<()> {
    let Loaded { checkpoint, store } = load_for_inference(run, &args.checkpoint, args.embeddings.as_deref())?;
    run.input(&args.pairs)?;
    let (schema, rows) = read_pair_rows(&args.pairs)?;
    check_schema(&checkpoint.metadata.schema, &schema)?;
    let threshold = args.threshold.unwrap_or(checkpoint.metadata.threshold);
    let refs: Vec<(&Record, &Record)> = rows.iter().map(|r| (&r.left, &r.right)).collect();
    let scores = predict_scores(&checkpoint.model, &store, &refs)?;

    let write = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(&args.out)?;
        w.write_record(["id", "score", "prediction"])?;
        for (row, score) in rows.iter().zip(&scores) {
            let decision = if *score >= threshold { "1" } else { "0" };
            w.write_record([row.id.as_str(), &score.to_string(), decision])?;
        }
        w.flush()?;
        Ok(())
    };
    write().with_context(|| format!("writing {}", args.out.display()))?;
    run.outputs.push(args.out.clone());
    emit(json!({"event": "predicted", "rows": rows.len(), "out": args.out, "threshold": threshold}));
    let manifest = args.manifest.clone();
    run_finish(run, &args, manifest.as_deref(), Some(&args.out))
}

fn cmd_explain(args: ExplainArgs, run: &mut Run) -> CliResult<()> {
    let Loaded { checkpoint, store } = load_for_inference(run, &args.checkpoint, args.embeddings.as_deref())?;
    let (schema, pairs): (Schema, Vec<(String, Record, Record)>) = if let Some(path) = &args.pairs {
        run.input(path)?;
        let (schema, rows) = read_pair_rows(path)?;
        check_schema(&checkpoint.metadata.schema, &schema)?;
        (schema, rows.into_iter().map(|r| (r.id, r.left, r.right)).collect())
    } else {
        let data = args.data.as_ref().expect("clap requires --data or --pairs");
        let dataset = load_dataset_for(run, data, args.split_seed, &checkpoint.metadata)?;
        if args.pair_index.is_none() {
            return Err(CliError::Usage("--data requires --pair-index".into()));
        }
        let pairs = dataset
            .split(args.split)
            .iter()
            .enumerate()
            .map(|(i, p)| (i.to_string(), p.left.clone(), p.right.clone()))
            .collect();
        (dataset.schema, pairs)
    };
    let selected: Vec<&(String, Record, Record)> = match args.pair_index {
        Some(i) => vec![pairs.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: pairs.len(),
        })?],
        None => pairs.iter().collect(),
    };
    let threshold = checkpoint.metadata.threshold;
    for (id, left, right) in selected {
        let e = explain_pair(&checkpoint.model, &store, &schema, left, right)?;
        if args.json {
            emit(json!({"event": "explanation", "id": id, "explanation": e}));
        } else {
            print!("pair {id}\n{}\n", render_explanation(&e, threshold));
        }
    }
    let manifest = args.manifest.clone();
    run_finish(run, &args, manifest.as_deref(), None)
}

fn cmd_gradcheck(args: GradcheckArgs, run: &mut Run) -> CliResult<()> {
    let variants: Vec<Variant> = match args.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    run.seeds = json!({"first": args.seed, "count": args.seeds});
    let fault = if args.inject_fault { 0.1 } else { 0.0 };
    let mut worst: f64 = 0.0;
    for variant in variants {
        for seed in args.seed..args.seed + args.seeds {
            let report = toy_gradient_check(variant, seed, fault)?;
            worst = worst.max(report.max_rel_error);
            emit(json!({
                "event": "gradcheck", "variant": variant, "seed": seed,
                "max_rel_error": report.max_rel_error, "coordinates": report.coordinates,
                "pass": report.max_rel_error < GRADCHECK_TOLERANCE,
            }));
        }
    }
    let manifest = args.manifest.clone();
    run_finish(run, &args, manifest.as_deref(), None)?;
    if worst >= GRADCHECK_TOLERANCE {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

/// Sorted unique tokens over every record of every split.
pub fn dataset_vocabulary(dataset: &Dataset) -> BTreeSet<String> {
    dataset
        .all_pairs()
        .flat_map(|p| p.left.values.iter().chain(&p.right.values))
        .flat_map(|v| tokenize(v))
        .collect()
}

fn cmd_vocab_extract(args: VocabArgs, run: &mut Run) -> CliResult<()> {
    run.input(&args.data)?;
    let dataset = load_dataset(&args.data, 0).context("loading dataset")?;
    run.dataset = Some(dataset.name.clone());
    let vocab = dataset_vocabulary(&dataset);
    let mut text = String::new();
    for t in &vocab {
        text.push_str(t);
        text.push('\n');
    }
    std::fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    run.outputs.push(args.out.clone());
    emit(json!({"event": "vocabulary", "tokens": vocab.len(), "out": args.out}));
    if vocab.is_empty() {
        eprintln!("warning: dataset has no tokens");
    }
    let manifest = args.manifest.clone();
    run_finish(run, &args, manifest.as_deref(), Some(&args.out))
}
