//! `emif` command line: dataset ingestion and synthesis, training,
//! evaluation, ablation, explanation export, and gradient verification.
//!
//! Every run writes a manifest beside its outputs with the fully resolved
//! configuration; rerunning with the same inputs reproduces the outputs
//! byte for byte. Option precedence is flag > config file > built-in
//! default, applied field by field.

use clap::{Args, Parser, Subcommand};
use emif_core::checkpoint::{load_model, save_model};
use emif_core::corpus::{
    build_vocabulary, dataset_stats, generate_synthetic, load_dataset, save_dataset,
    split_dataset, Dataset, IndexedExample, SynthConfig,
};
use emif_core::error::{Error, Result};
use emif_core::explain::{export_json, extract_explanation, render_html};
use emif_core::metrics::{metrics_csv_row, METRICS_CSV_HEADER};
use emif_core::model::{AblationVariant, Model};
use emif_core::training::{
    ablation_csv, evaluate, gradient_check, history_csv, run_ablation_suite, train, OptimizerKind,
    TrainConfig,
};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "emif",
    version,
    about = "Evidence-aware multi-source fusion for explainable fake news detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSON-lines dataset and report its statistics
    Ingest(IngestArgs),
    /// Generate a synthetic dataset with a planted, recoverable signal
    Synth(SynthArgs),
    /// Train a model; writes checkpoint.json and history.csv
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes metrics.csv
    Eval(EvalArgs),
    /// Train and evaluate all five ablation variants; writes ablation.csv
    Ablate(AblateArgs),
    /// Export JSON and HTML explanations for chosen example ids
    Explain(ExplainArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// JSON-lines dataset to validate
    #[arg(long)]
    data: PathBuf,
    /// Optional directory for the stats report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of examples to generate
    #[arg(long)]
    n: usize,
    /// Output JSON-lines file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Size of the noise-token pool
    #[arg(long, default_value_t = 120)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    topics: usize,
    #[arg(long, default_value_t = 6)]
    pairs: usize,
    #[arg(long, default_value_t = 4)]
    comments_per: usize,
    #[arg(long, default_value_t = 4)]
    relevant_per: usize,
    /// Fraction of comment/relevant slots replaced by pure noise
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

/// Training-configuration overrides shared by train/ablate/eval.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Flat key=value config file (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the KL consistency term
    #[arg(long)]
    beta: Option<f64>,
    /// How many divergent relevant articles to keep as evidence
    #[arg(long)]
    topk: Option<usize>,
    /// Embedding/hidden size d (also sets the attention sizes k and h)
    #[arg(long)]
    dim: Option<usize>,
    /// Epochs without validation-F1 improvement before stopping
    #[arg(long)]
    patience: Option<usize>,
    /// adam | sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// Worker threads (execution is deterministic regardless)
    #[arg(long)]
    threads: Option<usize>,
    /// Minimum token frequency for the vocabulary
    #[arg(long)]
    min_freq: Option<usize>,
    /// Maximum vocabulary size including PAD/UNK
    #[arg(long)]
    max_vocab: Option<usize>,
    /// full | no_r | no_c | no_ca | no_il
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSON-lines); split 0.8/0.1/0.1 internally
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation dataset (JSON-lines)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `emif train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated example ids to explain
    #[arg(long)]
    ids: String,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
}

/// Fully resolved run settings.
struct Resolved {
    train: TrainConfig,
    variant: AblationVariant,
    threads: usize,
    min_freq: usize,
    max_vocab: usize,
}

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Validation(format!(
                "config line {} is not key = value: \"{}\"",
                i + 1,
                line
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_from<T: FromStr>(map: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            Error::Validation(format!("config key \"{}\" has invalid value \"{}\"", key, raw))
        }),
    }
}

const CONFIG_KEYS: [&str; 13] = [
    "seed",
    "epochs",
    "batch",
    "lr",
    "beta",
    "topk",
    "dim",
    "patience",
    "optimizer",
    "threads",
    "min-freq",
    "max-vocab",
    "variant",
];

fn resolve(flags: &TrainFlags) -> Result<Resolved> {
    let file = match &flags.config {
        Some(path) => {
            let map = parse_config_file(path)?;
            for key in map.keys() {
                if !CONFIG_KEYS.contains(&key.as_str()) {
                    return Err(Error::Validation(format!(
                        "unknown config key \"{}\"",
                        key
                    )));
                }
            }
            map
        }
        None => HashMap::new(),
    };

    let defaults = TrainConfig::default();
    let seed = flags.seed.or(parse_from(&file, "seed")?).unwrap_or(defaults.seed);
    let epochs = flags
        .epochs
        .or(parse_from(&file, "epochs")?)
        .unwrap_or(defaults.epochs);
    let batch = flags
        .batch
        .or(parse_from(&file, "batch")?)
        .unwrap_or(defaults.batch_size);
    let lr = flags.lr.or(parse_from(&file, "lr")?).unwrap_or(defaults.lr);
    let beta = flags.beta.or(parse_from(&file, "beta")?).unwrap_or(defaults.beta);
    let topk = flags
        .topk
        .or(parse_from(&file, "topk")?)
        .unwrap_or(defaults.top_k);
    let dim = flags.dim.or(parse_from(&file, "dim")?);
    let patience = flags
        .patience
        .or(parse_from(&file, "patience")?)
        .unwrap_or(defaults.patience);
    let optimizer = match flags
        .optimizer
        .clone()
        .or_else(|| file.get("optimizer").cloned())
    {
        Some(s) => OptimizerKind::from_str(&s)?,
        None => defaults.optimizer,
    };
    let variant = match flags
        .variant
        .clone()
        .or_else(|| file.get("variant").cloned())
    {
        Some(s) => AblationVariant::from_str(&s)?,
        None => AblationVariant::Full,
    };
    let threads = flags
        .threads
        .or(parse_from(&file, "threads")?)
        .unwrap_or(1);
    if threads == 0 {
        return Err(Error::Validation("--threads must be >= 1".into()));
    }
    let min_freq = flags
        .min_freq
        .or(parse_from(&file, "min-freq")?)
        .unwrap_or(1);
    let max_vocab = flags
        .max_vocab
        .or(parse_from(&file, "max-vocab")?)
        .unwrap_or(50_000);

    let (d, attn_k, sim_h) = match dim {
        Some(d) => (d, d, d),
        None => (defaults.d, defaults.attn_k, defaults.sim_h),
    };
    let train = TrainConfig {
        seed,
        epochs,
        batch_size: batch,
        lr,
        beta,
        top_k: topk,
        d,
        attn_k,
        sim_h,
        patience,
        optimizer,
        ..defaults
    };
    train.validate()?;
    Ok(Resolved {
        train,
        variant,
        threads,
        min_freq,
        max_vocab,
    })
}

fn manifest_text(subcommand: &str, inputs: &[(&str, String)], resolved: &Resolved) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# emif {}", VERSION);
    let _ = writeln!(out, "# subcommand = {}", subcommand);
    for (key, value) in inputs {
        let _ = writeln!(out, "# {} = {}", key, value);
    }
    let t = &resolved.train;
    let _ = writeln!(out, "seed = {}", t.seed);
    let _ = writeln!(out, "epochs = {}", t.epochs);
    let _ = writeln!(out, "batch = {}", t.batch_size);
    let _ = writeln!(out, "lr = {}", t.lr);
    let _ = writeln!(out, "beta = {}", t.beta);
    let _ = writeln!(out, "topk = {}", t.top_k);
    let _ = writeln!(out, "dim = {}", t.d);
    let _ = writeln!(out, "patience = {}", t.patience);
    let _ = writeln!(out, "optimizer = {}", t.optimizer.as_str());
    let _ = writeln!(out, "variant = {}", resolved.variant.as_str());
    let _ = writeln!(out, "threads = {}", resolved.threads);
    let _ = writeln!(out, "min-freq = {}", resolved.min_freq);
    let _ = writeln!(out, "max-vocab = {}", resolved.max_vocab);
    out
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn format_stats_table(ds: &Dataset) -> String {
    let stats = dataset_stats(ds);
    let mut out = String::new();
    let _ = writeln!(out, "Statistics of the dataset");
    let _ = writeln!(out, "{:-<38}", "");
    let _ = writeln!(out, "{:<28}{:>10}", "Total records", stats.records);
    let _ = writeln!(out, "{:<28}{:>10}", "True news", stats.true_news);
    let _ = writeln!(out, "{:<28}{:>10}", "Fake news", stats.fake_news);
    let _ = writeln!(out, "{:<28}{:>10}", "User comments", stats.comments);
    let _ = writeln!(
        out,
        "{:<28}{:>10.2}",
        "Avg. relevant news per news", stats.avg_relevant
    );
    out
}

/// Splits, guaranteeing non-empty validation/test by falling back to the
/// nearest non-empty split on tiny datasets.
fn three_way_split(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (train_ds, mut val_ds, mut test_ds) = split_dataset(ds, [0.8, 0.1, 0.1], seed)?;
    if val_ds.is_empty() {
        val_ds = train_ds.clone();
    }
    if test_ds.is_empty() {
        test_ds = val_ds.clone();
    }
    Ok((train_ds, val_ds, test_ds))
}

fn index_all(model_vocab: &emif_core::corpus::Vocabulary, ds: &Dataset, limits: &emif_core::corpus::Limits) -> Vec<IndexedExample> {
    ds.examples
        .iter()
        .map(|e| model_vocab.encode_example(e, limits))
        .collect()
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let ds = load_dataset(&args.data, &TrainConfig::default().limits)?;
    let table = format_stats_table(&ds);
    print!("{}", table);
    if let Some(out) = args.out {
        write_file(&out.join("stats.txt"), &table)?;
        let resolved = resolve(&TrainFlags::default())?;
        let manifest = manifest_text(
            "ingest",
            &[("data", args.data.display().to_string())],
            &resolved,
        );
        write_file(&out.join("manifest.txt"), &manifest)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        vocab_size: args.vocab,
        topic_tokens: args.topics,
        claim_pairs: args.pairs,
        num_examples: args.n,
        comments_per: args.comments_per,
        relevant_per: args.relevant_per,
        noise: args.noise,
        seed: args.seed,
    };
    let ds = generate_synthetic(&cfg)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_dataset(&ds, &args.out)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "# emif {}", VERSION);
    let _ = writeln!(manifest, "# subcommand = synth");
    let _ = writeln!(manifest, "n = {}", cfg.num_examples);
    let _ = writeln!(manifest, "seed = {}", cfg.seed);
    let _ = writeln!(manifest, "vocab = {}", cfg.vocab_size);
    let _ = writeln!(manifest, "topics = {}", cfg.topic_tokens);
    let _ = writeln!(manifest, "pairs = {}", cfg.claim_pairs);
    let _ = writeln!(manifest, "comments-per = {}", cfg.comments_per);
    let _ = writeln!(manifest, "relevant-per = {}", cfg.relevant_per);
    let _ = writeln!(manifest, "noise = {}", cfg.noise);
    let manifest_path = PathBuf::from(format!("{}.manifest", args.out.display()));
    write_file(&manifest_path, &manifest)?;

    let stats = dataset_stats(&ds);
    println!(
        "wrote {} examples ({} true / {} fake) to {}",
        stats.records,
        stats.true_news,
        stats.fake_news,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let resolved = resolve(&args.flags)?;
    let ds = load_dataset(&args.data, &resolved.train.limits)?;
    let (train_ds, val_ds, _test_ds) = three_way_split(&ds, resolved.train.seed)?;
    let vocab = build_vocabulary(&train_ds, resolved.min_freq, resolved.max_vocab)?;
    let train_idx = index_all(&vocab, &train_ds, &resolved.train.limits);
    let val_idx = index_all(&vocab, &val_ds, &resolved.train.limits);

    let model = Model::init(vocab, resolved.train.to_model_config(), resolved.train.seed);
    let outcome = train(model, &train_idx, &val_idx, &resolved.train, resolved.variant)?;

    save_model(&outcome.model, &args.out.join("checkpoint.json"))?;
    write_file(&args.out.join("history.csv"), &history_csv(&outcome.history))?;
    let manifest = manifest_text(
        "train",
        &[("data", args.data.display().to_string())],
        &resolved,
    );
    write_file(&args.out.join("manifest.txt"), &manifest)?;

    let best = &outcome.history[outcome.best_epoch];
    println!(
        "trained {} epochs (best epoch {}); val accuracy {:.4}, F1 {:.4}",
        outcome.history.len(),
        outcome.best_epoch,
        best.val.accuracy,
        best.val.f1
    );
    println!("checkpoint: {}", args.out.join("checkpoint.json").display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let resolved = resolve(&args.flags)?;
    let model = load_model(&args.checkpoint)?;
    let ds = load_dataset(&args.data, &model.config.limits)?;
    let indexed = index_all(&model.vocab, &ds, &model.config.limits);
    let report = evaluate(&model, &indexed, resolved.variant)?;

    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&metrics_csv_row(resolved.variant.as_str(), &report));
    csv.push('\n');
    write_file(&args.out.join("metrics.csv"), &csv)?;
    let manifest = manifest_text(
        "eval",
        &[
            ("data", args.data.display().to_string()),
            ("checkpoint", args.checkpoint.display().to_string()),
        ],
        &resolved,
    );
    write_file(&args.out.join("manifest.txt"), &manifest)?;

    println!(
        "{}: accuracy {:.4}, precision {:.4}, recall {:.4}, F1 {:.4}",
        resolved.variant.as_str(),
        report.accuracy,
        report.precision,
        report.recall,
        report.f1
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let resolved = resolve(&args.flags)?;
    let ds = load_dataset(&args.data, &resolved.train.limits)?;
    let (train_ds, val_ds, test_ds) = three_way_split(&ds, resolved.train.seed)?;
    let vocab = build_vocabulary(&train_ds, resolved.min_freq, resolved.max_vocab)?;
    let train_idx = index_all(&vocab, &train_ds, &resolved.train.limits);
    let val_idx = index_all(&vocab, &val_ds, &resolved.train.limits);
    let test_idx = index_all(&vocab, &test_ds, &resolved.train.limits);

    let results = run_ablation_suite(&vocab, &train_idx, &val_idx, &test_idx, &resolved.train)?;
    let csv = ablation_csv(&results);
    write_file(&args.out.join("ablation.csv"), &csv)?;
    let manifest = manifest_text(
        "ablate",
        &[("data", args.data.display().to_string())],
        &resolved,
    );
    write_file(&args.out.join("manifest.txt"), &manifest)?;

    print!("{}", csv);
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let resolved = resolve(&args.flags)?;
    let model = load_model(&args.checkpoint)?;
    let ds = load_dataset(&args.data, &model.config.limits)?;

    let wanted: Vec<&str> = args
        .ids
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if wanted.is_empty() {
        return Err(Error::Validation("no example ids given".into()));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for id in &wanted {
        let example = ds
            .examples
            .iter()
            .find(|e| e.id == *id)
            .ok_or_else(|| Error::Validation(format!("example id \"{}\" not found", id)))?;
        let record = extract_explanation(&model, example, resolved.variant)?;
        write_file(&args.out.join(format!("{}.json", id)), &export_json(&record))?;
        render_html(&record, &args.out.join(format!("{}.html", id)))?;
    }
    let manifest = manifest_text(
        "explain",
        &[
            ("data", args.data.display().to_string()),
            ("checkpoint", args.checkpoint.display().to_string()),
            ("ids", args.ids.clone()),
        ],
        &resolved,
    );
    write_file(&args.out.join("manifest.txt"), &manifest)?;
    println!("wrote {} explanation(s) to {}", wanted.len(), args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    // A deliberately tiny model keeps the finite-difference sweep fast.
    let synth = SynthConfig {
        vocab_size: 20,
        topic_tokens: 2,
        claim_pairs: 2,
        num_examples: 4,
        comments_per: 2,
        relevant_per: 3,
        noise: 0.0,
        seed: args.seed,
    };
    let ds = generate_synthetic(&synth)?;
    let vocab = build_vocabulary(&ds, 1, 10_000)?;
    let config = emif_core::model::ModelConfig {
        d: 4,
        attn_k: 3,
        sim_h: 3,
        top_k: 2,
        ..Default::default()
    };
    let limits = config.limits.clone();
    let model = Model::init(vocab, config, args.seed);
    let ex = model
        .vocab
        .encode_example(&ds.examples[1], &limits);

    let report = gradient_check(&model, &ex, args.step)?;
    println!("{:<24}{:>14}", "parameter group", "max rel err");
    for group in &report.groups {
        println!("{:<24}{:>14.3e}", group.name, group.max_rel_err);
    }
    println!("{:<24}{:>14.3e}", "overall", report.max_rel_err);
    if report.max_rel_err > 1e-3 {
        return Err(Error::Validation(format!(
            "gradient check failed: max relative error {:.3e} exceeds 1e-3",
            report.max_rel_err
        )));
    }
    println!("gradient check passed");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(1)
        }
    }
}
