use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use seqrec_core::corpus::io::{self as corpus_io, fingerprint};
use seqrec_core::corpus::{build_sequences, load_interactions, repetition_stats, split_leave_one_out, DelimitedFormat};
use seqrec_core::eval::{evaluate, metric_rows, read_metrics_csv, write_metrics_csv, MetricRow, ReportTable};
use seqrec_core::experiment::{code_version, load_corpus, run, DatasetSummary, ExperimentConfig, Precision, RunManifest};
use seqrec_core::model::SeqRecModel;
use seqrec_core::numcore::{checkpoint, Real};
use seqrec_core::training::GridSpec;
use seqrec_core::{Error, Result};

const SCHEMA: &str = include_str!("../schema/experiment.schema.json");
const THREADS_ENV: &str = "SEQREC_THREADS";

const CONFIG_FILE: &str = "config.json";
const MANIFEST_FILE: &str = "manifest.json";
const METRICS_FILE: &str = "metrics.csv";
const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Parser)]
#[command(name = "seqrec", version, about = "Sequential recommendation with partitioned softmax heads")]
struct Cli {
    /// Worker threads (overrides the SEQREC_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter an interaction log into dense per-user sequences.
    Prep(PrepArgs),
    /// Repetition statistics of a sequences file as CSV.
    Stats(StatsArgs),
    /// Train one configuration and evaluate it on test.
    Train(RunArgs),
    /// Evaluate a trained run directory on the valid or test split.
    Evaluate(EvaluateArgs),
    /// Grid search over learning rate, batch size and dropout.
    Grid(RunArgs),
    /// Aggregate the metrics of run directories into tables.
    Report(ReportArgs),
    /// Print the JSON schema of experiment configs.
    Schema,
}

#[derive(Args)]
struct PrepArgs {
    /// Interaction file with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Field delimiter; `\t` for tab.
    #[arg(long, default_value = "\\t")]
    delimiter: String,
    #[arg(long, default_value = "user_id")]
    user_column: String,
    #[arg(long, default_value = "item_id")]
    item_column: String,
    /// Timestamp column; pass an empty string to keep file order.
    #[arg(long, default_value = "timestamp")]
    timestamp_column: String,
    #[arg(long, default_value_t = 5)]
    min_seq_len: usize,
    #[arg(long, default_value_t = 5)]
    min_item_freq: usize,
}

#[derive(Args)]
struct StatsArgs {
    /// A `sequences.txt` file or a directory produced by `prep`.
    sequences: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory written by `train` or `grid`.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint to load instead of the run's own.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["valid", "test"])]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories containing `metrics.csv` and `manifest.json`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads).and_then(|_| dispatch(cli.command)) {
        let detail = e.to_string();
        let line: String = detail.lines().next().unwrap_or_default().replace('"', "'");
        eprintln!("error kind={} message=\"{}\"", e.kind(), line);
        eprintln!("{detail}");
        return ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 });
    }
    ExitCode::SUCCESS
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prep(a) => prep(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train_cmd(a, false),
        Command::Grid(a) => train_cmd(a, true),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Report(a) => report(a),
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn parse_delimiter(s: &str) -> Result<char> {
    match s {
        "\\t" | "tab" => Ok('\t'),
        _ => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(Error::Config(format!("delimiter must be a single character, got {s:?}"))),
            }
        }
    }
}

#[derive(Serialize)]
struct PrepManifest<'a> {
    command: &'static str,
    code_version: String,
    input: &'a Path,
    format: &'a DelimitedFormat,
    min_seq_len: usize,
    min_item_freq: usize,
    rows_read: usize,
    malformed_rows: usize,
    malformed_lines: &'a [usize],
    items: usize,
    users: usize,
    interactions: usize,
    fingerprint: String,
}

fn prep(a: PrepArgs) -> Result<()> {
    let format = DelimitedFormat {
        delimiter: parse_delimiter(&a.delimiter)?,
        user: a.user_column.clone(),
        item: a.item_column.clone(),
        timestamp: Some(a.timestamp_column.clone()).filter(|s| !s.is_empty()),
    };
    let loaded = load_interactions(&a.input, &format)?;
    let corpus = build_sequences(&loaded.interactions, a.min_seq_len, a.min_item_freq)?;
    create_dir(&a.out)?;
    corpus_io::write_corpus(&a.out, &corpus)?;
    write_json(
        &a.out.join(MANIFEST_FILE),
        &PrepManifest {
            command: "prep",
            code_version: code_version(),
            input: &a.input,
            format: &format,
            min_seq_len: a.min_seq_len,
            min_item_freq: a.min_item_freq,
            rows_read: loaded.interactions.len() + loaded.malformed,
            malformed_rows: loaded.malformed,
            malformed_lines: &loaded.malformed_lines,
            items: corpus.items.len(),
            users: corpus.sequences.len(),
            interactions: corpus.num_interactions(),
            fingerprint: fingerprint(&corpus),
        },
    )?;
    println!(
        "prepared {} users, {} items, {} interactions ({} malformed rows skipped)",
        corpus.sequences.len(),
        corpus.items.len(),
        corpus.num_interactions(),
        loaded.malformed
    );
    Ok(())
}

#[derive(Serialize)]
struct StatsManifest<'a> {
    command: &'static str,
    code_version: String,
    input: &'a Path,
    users: usize,
    max_prefix_len: usize,
    prefixes_with_dup: u64,
    prefixes_without_dup: u64,
}

fn stats(a: StatsArgs) -> Result<()> {
    let path = if a.sequences.is_dir() { a.sequences.join(corpus_io::SEQUENCES_FILE) } else { a.sequences.clone() };
    let sequences = corpus_io::parse_sequences(&path, None)?;
    let curve = repetition_stats(&sequences);
    let mut csv = Vec::new();
    curve.write_csv(&mut csv).map_err(|e| Error::io(&a.out, e))?;
    let csv = String::from_utf8(csv).expect("csv output is utf-8");
    create_dir(&a.out)?;
    write_file(&a.out.join("repetition.csv"), &csv)?;
    let totals = curve.totals();
    write_json(
        &a.out.join(MANIFEST_FILE),
        &StatsManifest {
            command: "stats",
            code_version: code_version(),
            input: &path,
            users: sequences.len(),
            max_prefix_len: curve.max_len(),
            prefixes_with_dup: totals.count_with_dup,
            prefixes_without_dup: totals.count_without_dup,
        },
    )?;
    print!("{csv}");
    Ok(())
}

fn train_cmd(a: RunArgs, grid: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if grid && cfg.grid.is_none() {
        cfg.grid = Some(GridSpec { learning_rate: vec![5e-4, 1e-3, 2e-3], batch_size: vec![64, 128], dropout: Vec::new() });
    }
    if !grid {
        cfg.grid = None;
    }
    cfg.validate_static()?;
    let corpus = load_corpus(&cfg.dataset)?;
    cfg.validate(corpus.items.len())?;
    match cfg.precision {
        Precision::F64 => train_typed::<f64>(&cfg, &corpus, &a.out),
        Precision::F32 => train_typed::<f32>(&cfg, &corpus, &a.out),
    }
}

fn train_typed<F: Real>(cfg: &ExperimentConfig, corpus: &seqrec_core::corpus::Corpus, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let outcome = run::<F>(cfg, corpus)?;
    checkpoint::save(&outcome.model.store, &out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(MANIFEST_FILE), &(outcome.manifest.to_json()? + "\n"))?;
    if let Some(rows) = &outcome.manifest.grid {
        let mut w = csv::Writer::from_path(out.join("grid.csv")).map_err(|e| Error::Config(e.to_string()))?;
        let err = |e: csv::Error| Error::Config(format!("writing grid.csv: {e}"));
        w.write_record(["learning_rate", "batch_size", "dropout", "best_epoch", "valid_ndcg", "selected"]).map_err(err)?;
        for r in rows {
            w.write_record([
                r.point.learning_rate.to_string(),
                r.point.batch_size.to_string(),
                r.point.dropout.map(|d| d.to_string()).unwrap_or_default(),
                r.best_epoch.to_string(),
                r.valid_ndcg.to_string(),
                (r.test.is_some() as u8).to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(out.join("grid.csv"), e))?;
    }
    let rows = metric_rows(&cfg.dataset.name, &cfg.label(), &outcome.test);
    write_metrics(&out.join(METRICS_FILE), &rows)?;
    for r in &rows {
        println!("{},{},{},{}", r.dataset, r.variant, r.metric, r.value);
    }
    Ok(())
}

fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(f, rows)
}

#[derive(Serialize)]
struct EvalManifest<'a> {
    command: &'static str,
    code_version: String,
    run: &'a Path,
    checkpoint: &'a Path,
    split: &'a str,
    label: String,
    config: &'a ExperimentConfig,
    dataset: DatasetSummary,
    report: seqrec_core::eval::MetricReport,
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let cfg_path = a.run.join(CONFIG_FILE);
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let corpus = load_corpus(&cfg.dataset)?;
    cfg.validate(corpus.items.len())?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| a.run.join(CHECKPOINT_FILE));
    let (summary, report) = match cfg.precision {
        Precision::F64 => evaluate_typed::<f64>(&cfg, &corpus, &ckpt, &a.split)?,
        Precision::F32 => evaluate_typed::<f32>(&cfg, &corpus, &ckpt, &a.split)?,
    };
    create_dir(&a.out)?;
    let rows = metric_rows(&cfg.dataset.name, &cfg.label(), &report);
    write_metrics(&a.out.join(METRICS_FILE), &rows)?;
    write_json(
        &a.out.join(MANIFEST_FILE),
        &EvalManifest {
            command: "evaluate",
            code_version: code_version(),
            run: &a.run,
            checkpoint: &ckpt,
            split: &a.split,
            label: cfg.label(),
            config: &cfg,
            dataset: summary,
            report,
        },
    )?;
    for r in &rows {
        println!("{},{},{},{}", r.dataset, r.variant, r.metric, r.value);
    }
    Ok(())
}

fn evaluate_typed<F: Real>(
    cfg: &ExperimentConfig,
    corpus: &seqrec_core::corpus::Corpus,
    ckpt: &Path,
    split_name: &str,
) -> Result<(DatasetSummary, seqrec_core::eval::MetricReport)> {
    let split = split_leave_one_out(&corpus.sequences, cfg.dataset.max_seq_len);
    let mut model = SeqRecModel::<F>::new(cfg.model_config(), corpus.items.len(), cfg.train.seed)?;
    checkpoint::load_into(ckpt, &mut model.store)?;
    let cases = if split_name == "valid" { &split.valid } else { &split.test };
    let (_, report) = evaluate(&model, cases, cfg.eval.k)?;
    Ok((DatasetSummary::new(&cfg.dataset.name, corpus, &split), report))
}

#[derive(Serialize)]
struct ReportManifest<'a> {
    command: &'static str,
    code_version: String,
    runs: &'a [PathBuf],
    groups: &'a [(String, Vec<String>)],
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for dir in &a.runs {
        rows.extend(read_metrics_csv(&dir.join(METRICS_FILE))?);
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
            for g in &m.config.eval.groups {
                match groups.iter_mut().find(|(n, _)| *n == g.name) {
                    Some((_, members)) => {
                        for d in &g.datasets {
                            if !members.contains(d) {
                                members.push(d.clone());
                            }
                        }
                    }
                    None => groups.push((g.name.clone(), g.datasets.clone())),
                }
            }
        }
    }
    let table = ReportTable::build(&rows, &groups)?;
    create_dir(&a.out)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write_file(&a.out.join("report.csv"), &String::from_utf8(csv).expect("csv output is utf-8"))?;
    let md = table.to_markdown()?;
    write_file(&a.out.join("report.md"), &md)?;
    write_json(
        &a.out.join(MANIFEST_FILE),
        &ReportManifest { command: "report", code_version: code_version(), runs: &a.runs, groups: &table.groups },
    )?;
    print!("{md}");
    Ok(())
}
