//! Command-line driver: prepare, train, evaluate, recommend, reproduce.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{binarize, split, Format, PreparedDataset};
use crate::eval::{recall_at, rmse, EvalReport, MostPopular, ScoreRecommender, CSV_HEADER};
use crate::trainer::{train_ranking, train_rating, SplitInfo, Task, TrainConfig, TrainedModel};

#[derive(Debug, Parser)]
#[command(name = "semiae", version, about = "Semi-autoencoder recommender on MovieLens data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw MovieLens directory into a prepared dataset file.
    Prepare(PrepareArgs),
    /// Train a model on the training part of a split.
    Train(TrainArgs),
    /// Score a trained model on the held-out part of its split.
    Evaluate(EvaluateArgs),
    /// Print top-n unseen items for one user.
    Recommend(RecommendArgs),
    /// Rerun a results table over several seeds.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long, default_value = "ml-100k")]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub task: Task,
    /// Flat JSON overrides of the task defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to 0.8 for rating and 0.3 for ranking.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Split seed; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the split recorded in the model.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recall cutoffs for ranking models, e.g. `5,10`.
    #[arg(long, value_delimiter = ',')]
    pub recall: Option<Vec<usize>>,
    /// Ask for RMSE explicitly; only valid for rating models.
    #[arg(long)]
    pub rmse: bool,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `dataset,task,split,seed,metric,value` rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Raw MovieLens user id.
    #[arg(long)]
    pub user: u32,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub table: u8,
    /// ML-100K raw directory.
    #[arg(long)]
    pub raw: PathBuf,
    /// ML-1M raw directory; table 1 covers ML-100K only without it.
    #[arg(long)]
    pub raw_1m: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Flat JSON overrides of the task defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Recommend(a) => cmd_recommend(&a),
        Command::Reproduce(a) => cmd_reproduce(&a),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command run and the files it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub dataset_paths: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
}

impl RunManifest {
    fn start(command: &str, config: Option<&Path>, datasets: Vec<PathBuf>, seeds: Vec<u64>, out_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: config.map(Path::to_path_buf),
            dataset_paths: datasets,
            seeds,
            output_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
            started_at_unix: unix_now(),
            finished_at_unix: 0,
        }
    }

    /// Writes `contents` to `path` and records its hash.
    fn write(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_hex(contents),
        });
        Ok(())
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at_unix = unix_now();
        let json = serde_json::to_string_pretty(&self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn parent_dir(out: &Path) -> PathBuf {
    out.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_prepared(path: &Path) -> Result<PreparedDataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PreparedDataset::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

fn read_model(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TrainedModel::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

pub fn load_config(task: Task, path: Option<&Path>) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_json(task, &text).with_context(|| format!("config {}", p.display()))?
        }
        None => TrainConfig::defaults(task),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn default_train_fraction(task: Task) -> f64 {
    match task {
        Task::Rating => 0.8,
        Task::Ranking => 0.3,
    }
}

fn cmd_prepare(a: &PrepareArgs) -> Result<()> {
    let prepared = PreparedDataset::from_raw_dir(&a.raw, a.format)?;
    let mut manifest = RunManifest::start("prepare", None, vec![a.raw.clone()], vec![], &parent_dir(&a.out));
    manifest.write(&a.out, prepared.to_json().as_bytes())?;
    manifest.finish(&manifest_path(&a.out))?;
    println!(
        "M={} N={} |Ω|={} K_user={} K_item={}",
        prepared.num_users,
        prepared.num_items,
        prepared.triples.len(),
        prepared.user_side_info.column_labels.len(),
        prepared.item_side_info.column_labels.len()
    );
    Ok(())
}

/// Splits, trains and returns the model with its split recorded.
pub fn train_on_split(
    prepared: &PreparedDataset,
    cfg: &TrainConfig,
    train_fraction: f64,
    seed: u64,
) -> Result<TrainedModel> {
    let (train, _) = split(&prepared.ratings()?, train_fraction, seed)?;
    let mut model = match cfg.task {
        Task::Rating => train_rating(&train, &prepared.item_features()?, cfg)?,
        Task::Ranking => {
            let train = binarize(&train, cfg.like_rule());
            train_ranking(&train, &prepared.user_profiles()?, cfg)?
        }
    };
    model.split = Some(SplitInfo {
        train_fraction,
        seed,
    });
    Ok(model)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.task, a.config.as_deref())?;
    let prepared = read_prepared(&a.data)?;
    let fraction = a.train_fraction.unwrap_or(default_train_fraction(a.task));
    let seed = a.seed.unwrap_or(cfg.seed);
    let model = train_on_split(&prepared, &cfg, fraction, seed)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().unwrap_or_default().to_os_string();
        name.push(".loss.csv");
        a.out.with_file_name(name)
    });
    let mut manifest = RunManifest::start(
        "train",
        a.config.as_deref(),
        vec![a.data.clone()],
        vec![seed],
        &parent_dir(&a.out),
    );
    manifest.write(&a.out, model.to_json().as_bytes())?;
    manifest.write(&log_path, model.loss_log_csv().as_bytes())?;
    manifest.finish(&manifest_path(&a.out))?;
    if let Some(last) = model.loss_history.last() {
        println!("trained {} model, final epoch loss {last}", model.task);
    }
    Ok(())
}

/// Resolves the split to evaluate on; refuses one that differs from the
/// split the model was trained on.
fn resolve_split(model: &TrainedModel, fraction: Option<f64>, seed: Option<u64>) -> Result<SplitInfo> {
    match (model.split, fraction, seed) {
        (Some(rec), f, s) => {
            let asked = SplitInfo {
                train_fraction: f.unwrap_or(rec.train_fraction),
                seed: s.unwrap_or(rec.seed),
            };
            ensure!(
                asked == rec,
                "model was trained on split (fraction {}, seed {}); evaluating on (fraction {}, seed {}) would leak training ratings into the test set",
                rec.train_fraction,
                rec.seed,
                asked.train_fraction,
                asked.seed
            );
            Ok(rec)
        }
        (None, Some(train_fraction), Some(seed)) => Ok(SplitInfo {
            train_fraction,
            seed,
        }),
        (None, _, _) => bail!("model has no recorded split; pass --train-fraction and --seed"),
    }
}

/// Evaluates a model on the test part of `split_info`.
pub fn evaluate_model(
    model: &TrainedModel,
    prepared: &PreparedDataset,
    split_info: SplitInfo,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    let (train, test) = split(&prepared.ratings()?, split_info.train_fraction, split_info.seed)?;
    let echo = serde_json::to_value(&model.config)?;
    Ok(match model.task {
        Task::Rating => {
            let pred = model.predict_ratings(&train, &prepared.item_features()?)?;
            EvalReport::rating(rmse(&pred, &test)?, &test, split_info.train_fraction, split_info.seed, echo)
        }
        Task::Ranking => {
            let rule = model.config.like_rule();
            let (train, test) = (binarize(&train, rule), binarize(&test, rule));
            let scores = model.ranking_scores(&train, &prepared.user_profiles()?)?;
            let rec = ScoreRecommender::new(scores, &train);
            let recall = recall_at(&rec, &test, cutoffs)?;
            EvalReport::ranking(recall, &test, split_info.train_fraction, split_info.seed, echo)
        }
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let cutoffs = match (model.task, &a.recall, a.rmse) {
        (Task::Rating, Some(_), _) => bail!("--recall needs a ranking model; this is a rating model"),
        (Task::Ranking, _, true) => bail!("--rmse needs a rating model; this is a ranking model"),
        (Task::Ranking, Some(c), _) => {
            ensure!(!c.is_empty() && c.iter().all(|&n| n > 0), "recall cutoffs must be positive");
            c.clone()
        }
        (Task::Ranking, None, _) => vec![5, 10],
        (Task::Rating, None, _) => vec![],
    };
    let split_info = resolve_split(&model, a.train_fraction, a.seed)?;
    let prepared = read_prepared(&a.data)?;
    let report = evaluate_model(&model, &prepared, split_info, &cutoffs)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if a.out.is_none() && a.csv.is_none() {
        print!("{json}");
        return Ok(());
    }
    let out_dir = a.out.as_deref().or(a.csv.as_deref()).map(parent_dir).unwrap_or_default();
    let mut manifest = RunManifest::start(
        "evaluate",
        None,
        vec![a.data.clone(), a.model.clone()],
        vec![split_info.seed],
        &out_dir,
    );
    match &a.out {
        Some(out) => manifest.write(out, json.as_bytes())?,
        None => print!("{json}"),
    }
    if let Some(csv) = &a.csv {
        let mut text = format!("{CSV_HEADER}\n");
        for row in report.csv_rows(prepared.format.to_string().as_str()) {
            text.push_str(&row);
            text.push('\n');
        }
        manifest.write(csv, text.as_bytes())?;
    }
    let anchor = a.out.as_ref().or(a.csv.as_ref()).expect("one output is set");
    manifest.finish(&manifest_path(anchor))
}

fn cmd_recommend(a: &RecommendArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    ensure!(model.task == Task::Ranking, "recommend needs a ranking model; this is a {} model", model.task);
    let prepared = read_prepared(&a.data)?;
    let user = prepared
        .id_maps
        .users
        .index_of(a.user)
        .with_context(|| format!("user id {} is not in {}", a.user, a.data.display()))?;
    let ratings = prepared.ratings()?;
    let train = match model.split {
        Some(s) => split(&ratings, s.train_fraction, s.seed)?.0,
        None => ratings,
    };
    let train = binarize(&train, model.config.like_rule());
    let items = model.recommend_top_n(&train, &prepared.user_profiles()?, user, a.n)?;
    println!("rank\titem_id");
    for (rank, item) in items.into_iter().enumerate() {
        let id = prepared.id_maps.items.raw_id(item).expect("index from the same map");
        println!("{}\t{id}", rank + 1);
    }
    Ok(())
}

/// Published reference value (mean, spread) for one table cell.
pub fn published(table: u8, method: &str, dataset: Format, fraction: f64, metric: &str) -> Option<(f64, f64)> {
    let pct = (fraction * 100.0).round() as u32;
    Some(match (table, method, dataset, pct, metric) {
        (1, "semiae", Format::Ml100k, 80, "rmse") => (0.896, 0.003),
        (1, "semiae", Format::Ml100k, 50, "rmse") => (0.926, 0.002),
        (1, "semiae", Format::Ml1m, 80, "rmse") => (0.858, 0.001),
        (1, "semiae", Format::Ml1m, 50, "rmse") => (0.882, 0.001),
        (2, "semiae", Format::Ml100k, 30, "recall@5") => (9.487, 0.182),
        (2, "semiae", Format::Ml100k, 30, "recall@10") => (14.836, 0.209),
        (2, "semiae", Format::Ml100k, 50, "recall@5") => (9.543, 0.365),
        (2, "semiae", Format::Ml100k, 50, "recall@10") => (15.909, 0.468),
        (2, "most_popular", Format::Ml100k, 30, "recall@5") => (7.036, 0.0),
        (2, "most_popular", Format::Ml100k, 30, "recall@10") => (11.297, 0.0),
        (2, "most_popular", Format::Ml100k, 50, "recall@5") => (7.535, 0.0),
        (2, "most_popular", Format::Ml100k, 50, "recall@10") => (13.185, 0.0),
        _ => return None,
    })
}

/// One metric value from one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: &'static str,
    pub dataset: Format,
    pub task: Task,
    pub train_fraction: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Rating RMSE of a freshly trained model on one split.
pub fn rating_run(prepared: &PreparedDataset, cfg: &TrainConfig, fraction: f64, seed: u64) -> Result<f64> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let model = train_on_split(prepared, &cfg, fraction, seed)?;
    let report = evaluate_model(&model, prepared, model.split.expect("set by train_on_split"), &[])?;
    Ok(report.rmse.expect("rating report"))
}

/// Recall of the trained model and of MostPopular on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingRun {
    pub ours: BTreeMap<usize, f64>,
    pub most_popular: BTreeMap<usize, f64>,
}

pub fn ranking_run(
    prepared: &PreparedDataset,
    cfg: &TrainConfig,
    fraction: f64,
    seed: u64,
    cutoffs: &[usize],
) -> Result<RankingRun> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let model = train_on_split(prepared, &cfg, fraction, seed)?;
    let split_info = model.split.expect("set by train_on_split");
    let ours = evaluate_model(&model, prepared, split_info, cutoffs)?
        .recall
        .expect("ranking report");
    let (train, test) = split(&prepared.ratings()?, fraction, seed)?;
    let rule = cfg.like_rule();
    let (train, test) = (binarize(&train, rule), binarize(&test, rule));
    let most_popular = recall_at(&MostPopular::fit(&train), &test, cutoffs)?;
    Ok(RankingRun { ours, most_popular })
}

/// Everything `reproduce` writes, as text.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOutput {
    pub records: Vec<RunRecord>,
    pub runs_csv: String,
    pub summary_csv: String,
}

pub const RUNS_HEADER: &str = "method,dataset,task,split,seed,metric,value";
pub const SUMMARY_HEADER: &str = "method,dataset,task,split,metric,mean,std,runs,published_mean,published_std";

/// Runs every cell of table 1 (rating RMSE) or table 2 (ranking recall) for
/// each seed. Seeds drive both the split and the weight initialization.
pub fn reproduce(
    table: u8,
    datasets: &[PreparedDataset],
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<ReproduceOutput> {
    ensure!(!seeds.is_empty(), "at least one seed is needed");
    let mut records = Vec::new();
    for prepared in datasets {
        let fractions: &[f64] = match table {
            1 => &[0.8, 0.5],
            2 => &[0.3, 0.5],
            other => bail!("no table {other}; choose 1 or 2"),
        };
        for &fraction in fractions {
            for &seed in seeds {
                info!("table {table}: {} fraction {fraction} seed {seed}", prepared.format);
                let base = |method, task, metric: String, value| RunRecord {
                    method,
                    dataset: prepared.format,
                    task,
                    train_fraction: fraction,
                    seed,
                    metric,
                    value,
                };
                if table == 1 {
                    let value = rating_run(prepared, config, fraction, seed)?;
                    records.push(base("semiae", Task::Rating, "rmse".into(), value));
                } else {
                    let run = ranking_run(prepared, config, fraction, seed, &[5, 10])?;
                    for (method, recall) in [("semiae", &run.ours), ("most_popular", &run.most_popular)] {
                        for (n, v) in recall {
                            records.push(base(method, Task::Ranking, format!("recall@{n}"), *v));
                        }
                    }
                }
            }
        }
    }
    let mut runs_csv = format!("{RUNS_HEADER}\n");
    for r in &records {
        writeln!(
            runs_csv,
            "{},{},{},{},{},{},{}",
            r.method, r.dataset, r.task, r.train_fraction, r.seed, r.metric, r.value
        )?;
    }
    let summary_csv = summarize(table, &records);
    Ok(ReproduceOutput {
        records,
        runs_csv,
        summary_csv,
    })
}

/// Mean and sample standard deviation per cell, in first-seen order.
fn summarize(table: u8, records: &[RunRecord]) -> String {
    let mut cells: Vec<(&RunRecord, Vec<f64>)> = Vec::new();
    for r in records {
        let same = |c: &&mut (&RunRecord, Vec<f64>)| {
            c.0.method == r.method
                && c.0.dataset == r.dataset
                && c.0.train_fraction == r.train_fraction
                && c.0.metric == r.metric
        };
        match cells.iter_mut().find(|c| same(c)) {
            Some(cell) => cell.1.push(r.value),
            None => cells.push((r, vec![r.value])),
        }
    }
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (r, values) in cells {
        let (mean, std) = mean_std(&values);
        let (published_mean, published_std) = match published(table, r.method, r.dataset, r.train_fraction, &r.metric) {
            Some((m, s)) => (m.to_string(), s.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{mean:.4},{std:.4},{},{published_mean},{published_std}",
            r.method,
            r.dataset,
            r.task,
            r.train_fraction,
            r.metric,
            values.len()
        );
    }
    out
}

/// Mean and sample (n - 1) standard deviation; the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_reproduce(a: &ReproduceArgs) -> Result<()> {
    let task = if a.table == 1 { Task::Rating } else { Task::Ranking };
    let config = load_config(task, a.config.as_deref())?;
    let mut dirs = vec![(a.raw.clone(), Format::Ml100k)];
    match (&a.raw_1m, a.table) {
        (Some(dir), 1) => dirs.push((dir.clone(), Format::Ml1m)),
        (Some(_), _) => bail!("--raw-1m only applies to table 1"),
        _ => {}
    }
    let datasets = dirs
        .iter()
        .map(|(dir, format)| PreparedDataset::from_raw_dir(dir, *format))
        .collect::<Result<Vec<_>, _>>()?;
    let out_dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("reproduce-table{}", a.table)));
    let mut manifest = RunManifest::start(
        "reproduce",
        a.config.as_deref(),
        dirs.iter().map(|(d, _)| d.clone()).collect(),
        a.seeds.clone(),
        &out_dir,
    );
    let output = reproduce(a.table, &datasets, &a.seeds, &config)?;
    manifest.write(&out_dir.join("runs.csv"), output.runs_csv.as_bytes())?;
    manifest.write(&out_dir.join("summary.csv"), output.summary_csv.as_bytes())?;
    manifest.finish(&out_dir.join("manifest.json"))?;
    print!("{}", output.summary_csv);
    Ok(())
}
