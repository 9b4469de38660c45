//! Command-line pipeline: ingest, build-graph, train-model, predict,
//! evaluate, grid-search, and synth.
//!
//! Each subcommand reads its declared inputs, writes its declared
//! artifacts, prints a one-line JSON summary to stdout, and logs
//! diagnostics to stderr. Exit status: 0 on success, 2 on usage errors,
//! 1 otherwise.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use coldrank::catalog::{
    build_index, ingest_shows_file, ingest_transactions_file, read_index_cache_file, split_holdout,
    write_index_cache_file, write_shows_jsonl, write_transactions_csv, Catalog, InteractionIndex,
    ShowRecord, TestSample, TransactionFormat, INDEX_CACHE_VERSION,
};
use coldrank::contentsim::{
    assemble_training_set, insert_new_show, read_model_json_file, train_sgd, write_model_json_file,
    InsertionMode, InsertionPolicy, SgdHyperParams, MODEL_JSON_VERSION,
};
use coldrank::copurchase::{
    build_graph, read_graph_tsv_file, write_graph_tsv_file, WeightFunctionKind, GRAPH_TSV_VERSION,
};
use coldrank::evaluation::{
    evaluate, generate_synthetic, grid_search, write_grid_tsv_file, write_report_json_file,
    EvalOptions, GridSettings, RevenueConfig, SpendDistribution, SyntheticSpec, GRID_TSV_VERSION,
    REPORT_JSON_VERSION,
};
use coldrank::propagation::{propagate, rank_users, write_ranking_csv_file, RANKING_CSV_VERSION};
use coldrank::Money;

use config::{pick, require, FileConfig};

fn long_version() -> &'static str {
    static VERSION: OnceLock<String> = OnceLock::new();
    VERSION.get_or_init(|| {
        format!(
            "{} (formats: {INDEX_CACHE_VERSION}, {GRAPH_TSV_VERSION}, {MODEL_JSON_VERSION}, \
             {RANKING_CSV_VERSION}, {REPORT_JSON_VERSION}, {GRID_TSV_VERSION})",
            env!("CARGO_PKG_VERSION")
        )
    })
}

#[derive(Parser)]
#[command(
    name = "coldrank",
    version,
    long_version = long_version(),
    about = "Audience ranking for brand-new live shows"
)]
struct Cli {
    /// Key-value configuration file (TOML); flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: machine parallelism).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse transactions (and optionally shows) and write an index cache.
    Ingest(IngestArgs),
    /// Build the item-item co-purchase graph for one weight function.
    BuildGraph(BuildGraphArgs),
    /// Assemble the training set and fit the content-to-weight model.
    TrainModel(TrainModelArgs),
    /// Insert a new show, propagate, and export the ranked audience.
    Predict(PredictArgs),
    /// Temporal-holdout evaluation with the optimal-revenue metric.
    Evaluate(EvaluateArgs),
    /// Sweep propagation lengths and weight functions into a revenue matrix.
    GridSearch(GridSearchArgs),
    /// Generate a synthetic data set with planted communities.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Transactions CSV.
    #[arg(long)]
    transactions: Option<PathBuf>,
    /// Show descriptions (JSON lines); parsed and counted when given.
    #[arg(long)]
    shows: Option<PathBuf>,
    /// Where to write the index cache.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args, Clone)]
struct ColumnArgs {
    /// Column holding the user id.
    #[arg(long)]
    col_user: Option<String>,
    /// Column holding the show id.
    #[arg(long)]
    col_show: Option<String>,
    /// Column holding the amount in euros.
    #[arg(long)]
    col_amount: Option<String>,
    /// Column holding the UTC-seconds timestamp.
    #[arg(long)]
    col_timestamp: Option<String>,
}

#[derive(Args)]
struct IndexInput {
    /// Index cache written by `ingest`.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Raw transactions CSV, indexed on the fly (alternative to --index).
    #[arg(long)]
    transactions: Option<PathBuf>,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[command(flatten)]
    input: IndexInput,
    /// Weight function: amazon, bp, jaccard, jaccard-asym, mdw, mdw-asym, nbi.
    #[arg(long)]
    kind: Option<String>,
    /// Where to write the graph TSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SgdArgs {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Seed of the per-epoch row shuffle.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// L2 penalty on the coefficients.
    #[arg(long)]
    l2: Option<f64>,
    /// Fit without an intercept term.
    #[arg(long)]
    no_intercept: bool,
    /// Seed of the negative-pair sample.
    #[arg(long)]
    negative_seed: Option<u64>,
}

#[derive(Args)]
struct TrainModelArgs {
    #[command(flatten)]
    input: IndexInput,
    /// Show descriptions (JSON lines).
    #[arg(long)]
    shows: Option<PathBuf>,
    /// Graph TSV written by `build-graph`.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    sgd: SgdArgs,
    /// Where to write the model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct PolicyArgs {
    /// Insertion mode: keep-positive (default) or top-k.
    #[arg(long)]
    insertion: Option<String>,
    /// K for top-k insertion.
    #[arg(long)]
    top_k: Option<usize>,
    /// Only add outgoing edges from the new show.
    #[arg(long)]
    one_way: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    input: IndexInput,
    /// Show descriptions (JSON lines).
    #[arg(long)]
    shows: Option<PathBuf>,
    /// The new show as a single JSON object.
    #[arg(long)]
    show: PathBuf,
    /// Graph TSV written by `build-graph`.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Model JSON written by `train-model`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Propagation length.
    #[arg(long)]
    l: Option<u32>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Where to write the ranked audience CSV.
    #[arg(long)]
    top: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Transactions CSV (amounts and timestamps are needed).
    #[arg(long)]
    transactions: Option<PathBuf>,
    /// Show descriptions (JSON lines).
    #[arg(long)]
    shows: Option<PathBuf>,
    /// Holdout cutoff in UTC seconds.
    #[arg(long)]
    cutoff: Option<i64>,
    /// Evaluate at most this many sampled test shows.
    #[arg(long)]
    test_sample: Option<usize>,
    /// Seed of the test-show sample.
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long)]
    kind: Option<String>,
    /// Propagation length.
    #[arg(long)]
    l: Option<u32>,
    #[command(flatten)]
    sgd: SgdArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Per-contact communication cost in euros.
    #[arg(long)]
    cost: Option<String>,
    /// Where to write the report JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridSearchArgs {
    #[arg(long)]
    transactions: Option<PathBuf>,
    #[arg(long)]
    shows: Option<PathBuf>,
    /// Holdout cutoff in UTC seconds.
    #[arg(long)]
    cutoff: Option<i64>,
    #[arg(long)]
    test_sample: Option<usize>,
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Propagation lengths: a range like 1..5 or a list like 1,3,5.
    #[arg(long)]
    l: Option<String>,
    /// Weight functions: "all" or a comma-separated list.
    #[arg(long)]
    kinds: Option<String>,
    #[command(flatten)]
    sgd: SgdArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Per-contact communication cost in euros.
    #[arg(long)]
    cost: Option<String>,
    /// Where to write the revenue matrix TSV.
    #[arg(long)]
    out_matrix: PathBuf,
    /// Optional JSON dump of the grid result.
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    shows: Option<usize>,
    #[arg(long)]
    communities: Option<usize>,
    /// Probability that a feature or purchase leaks out of its community.
    #[arg(long)]
    feature_noise: Option<f64>,
    /// Spend model: fixed:<euros> or uniform:<min>..<max>.
    #[arg(long)]
    spend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for transactions.csv, shows.jsonl and communities.json.
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(threads) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&file, args),
        Command::BuildGraph(args) => cmd_build_graph(&file, args),
        Command::TrainModel(args) => cmd_train_model(&file, args),
        Command::Predict(args) => cmd_predict(&file, args),
        Command::Evaluate(args) => cmd_evaluate(&file, args),
        Command::GridSearch(args) => cmd_grid_search(&file, args),
        Command::Synth(args) => cmd_synth(&file, args),
    }
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

// ---------------------------------------------------------------------
// Shared resolution
// ---------------------------------------------------------------------

fn transaction_format(file: &FileConfig, columns: Option<&ColumnArgs>) -> TransactionFormat {
    let defaults = TransactionFormat::default();
    let flag = |get: fn(&ColumnArgs) -> &Option<String>| columns.and_then(|c| get(c).clone());
    TransactionFormat {
        user_id: pick(
            flag(|c| &c.col_user),
            file.col_user.clone(),
            defaults.user_id,
        ),
        show_id: pick(
            flag(|c| &c.col_show),
            file.col_show.clone(),
            defaults.show_id,
        ),
        amount: pick(
            flag(|c| &c.col_amount),
            file.col_amount.clone(),
            defaults.amount,
        ),
        timestamp: pick(
            flag(|c| &c.col_timestamp),
            file.col_timestamp.clone(),
            defaults.timestamp,
        ),
    }
}

fn load_index(file: &FileConfig, input: &IndexInput) -> Result<InteractionIndex> {
    let cache = input.index.clone().or_else(|| {
        if input.transactions.is_some() {
            None
        } else {
            file.index.clone()
        }
    });
    if let Some(path) = cache {
        return read_index_cache_file(&path)
            .with_context(|| format!("catalog: loading index cache {}", path.display()));
    }
    let path = require(
        input.transactions.clone(),
        file.transactions.clone(),
        "--index or --transactions",
    )?;
    let report = ingest_transactions_file(&path, &transaction_format(file, None))
        .with_context(|| format!("catalog: ingesting {}", path.display()))?;
    warn_malformed(&report.malformed_samples, report.malformed_count);
    Ok(build_index(&report.transactions))
}

fn load_catalog(file: &FileConfig, flag: Option<PathBuf>) -> Result<Catalog> {
    let path = require(flag, file.shows.clone(), "--shows")?;
    ingest_shows_file(&path).with_context(|| format!("catalog: reading shows {}", path.display()))
}

fn warn_malformed(samples: &[(u64, String)], count: usize) {
    if count > 0 {
        log::warn!("{count} malformed transaction rows were skipped");
        for (line, reason) in samples {
            log::warn!("  line {line}: {reason}");
        }
    }
}

fn resolve_kind(file: &FileConfig, flag: Option<&str>) -> Result<WeightFunctionKind> {
    let name = require(flag.map(String::from), file.kind.clone(), "--kind")?;
    Ok(name.parse()?)
}

fn resolve_hyper(file: &FileConfig, args: &SgdArgs) -> SgdHyperParams {
    let defaults = SgdHyperParams::default();
    SgdHyperParams {
        learning_rate: pick(
            args.learning_rate,
            file.learning_rate,
            defaults.learning_rate,
        ),
        epochs: pick(args.epochs, file.epochs, defaults.epochs),
        shuffle_seed: pick(args.shuffle_seed, file.shuffle_seed, defaults.shuffle_seed),
        l2: args.l2.or(file.l2),
        fit_intercept: if args.no_intercept {
            false
        } else {
            file.fit_intercept.unwrap_or(defaults.fit_intercept)
        },
    }
}

fn resolve_negative_seed(file: &FileConfig, args: &SgdArgs) -> u64 {
    pick(args.negative_seed, file.negative_seed, 17)
}

fn resolve_policy(file: &FileConfig, args: &PolicyArgs) -> Result<InsertionPolicy> {
    let mode_name = pick(
        args.insertion.clone(),
        file.insertion.clone(),
        "keep-positive".into(),
    );
    let mode = match mode_name.as_str() {
        "keep-positive" => InsertionMode::KeepPositive,
        "top-k" => {
            let k = require(args.top_k, file.top_k, "--top-k")?;
            InsertionMode::TopK(k)
        }
        other => bail!("unknown insertion mode '{other}', expected keep-positive or top-k"),
    };
    let symmetric = if args.one_way {
        false
    } else {
        file.symmetric_insertion.unwrap_or(true)
    };
    Ok(InsertionPolicy { mode, symmetric })
}

fn resolve_cost(file: &FileConfig, flag: Option<&str>) -> Result<RevenueConfig> {
    let cost = match flag {
        Some(text) => Money::parse_euros(text)?,
        None => match file.communication_cost {
            Some(euros) => Money::from_cents((euros * 100.0).round() as i64),
            None => RevenueConfig::default().communication_cost,
        },
    };
    if cost.is_negative() {
        bail!("communication cost must be non-negative");
    }
    Ok(RevenueConfig {
        communication_cost: cost,
    })
}

fn resolve_split(
    file: &FileConfig,
    transactions: Option<PathBuf>,
    cutoff: Option<i64>,
    test_sample: Option<usize>,
    sample_seed: Option<u64>,
) -> Result<coldrank::catalog::HoldoutSplit> {
    let path = require(transactions, file.transactions.clone(), "--transactions")?;
    let report = ingest_transactions_file(&path, &transaction_format(file, None))
        .with_context(|| format!("catalog: ingesting {}", path.display()))?;
    warn_malformed(&report.malformed_samples, report.malformed_count);
    let cutoff = require(cutoff, file.cutoff, "--cutoff")?;
    let sample = test_sample.or(file.test_sample).map(|size| TestSample {
        size,
        seed: pick(sample_seed, file.sample_seed, 11),
    });
    split_holdout(&report.transactions, cutoff, sample).context("catalog: splitting holdout")
}

fn parse_l_values(text: &str) -> Result<Vec<u32>> {
    if let Some((start, end)) = text.split_once("..") {
        let start: u32 = start.trim().parse().context("parsing --l range start")?;
        let end: u32 = end.trim().parse().context("parsing --l range end")?;
        if start < 1 || end < start {
            bail!("--l range must satisfy 1 <= start <= end");
        }
        return Ok((start..=end).collect());
    }
    text.split(',')
        .map(|token| {
            token
                .trim()
                .parse::<u32>()
                .with_context(|| format!("parsing --l value '{token}'"))
        })
        .collect()
}

fn parse_kinds(text: &str) -> Result<Vec<WeightFunctionKind>> {
    if text.trim() == "all" {
        return Ok(WeightFunctionKind::ALL.to_vec());
    }
    text.split(',')
        .map(|token| Ok(token.trim().parse::<WeightFunctionKind>()?))
        .collect()
}

// ---------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------

fn cmd_ingest(file: &FileConfig, args: IngestArgs) -> Result<()> {
    let path = require(
        args.transactions,
        file.transactions.clone(),
        "--transactions",
    )?;
    let format = transaction_format(file, Some(&args.columns));
    let report = ingest_transactions_file(&path, &format)
        .with_context(|| format!("ingest (catalog): reading {}", path.display()))?;
    warn_malformed(&report.malformed_samples, report.malformed_count);
    let index = build_index(&report.transactions);

    let catalog_shows = match args.shows.clone().or_else(|| file.shows.clone()) {
        Some(shows_path) => Some(
            ingest_shows_file(&shows_path)
                .with_context(|| format!("ingest (catalog): reading {}", shows_path.display()))?
                .len(),
        ),
        None => None,
    };

    write_index_cache_file(&index, &args.out)
        .with_context(|| format!("ingest (catalog): writing {}", args.out.display()))?;
    summary(json!({
        "command": "ingest",
        "transactions": report.transactions.len(),
        "malformed": report.malformed_count,
        "users": index.user_count(),
        "shows": index.show_count(),
        "catalog_shows": catalog_shows,
        "out": args.out,
    }));
    Ok(())
}

fn cmd_build_graph(file: &FileConfig, args: BuildGraphArgs) -> Result<()> {
    let index = load_index(file, &args.input).context("build-graph (catalog)")?;
    let kind = resolve_kind(file, args.kind.as_deref())?;
    let graph = build_graph(&index, kind);
    write_graph_tsv_file(&graph, &args.out)
        .with_context(|| format!("build-graph (copurchase): writing {}", args.out.display()))?;
    summary(json!({
        "command": "build-graph",
        "kind": kind.name(),
        "nodes": graph.node_count(),
        "edges": graph.edge_count(),
        "out": args.out,
    }));
    Ok(())
}

fn cmd_train_model(file: &FileConfig, args: TrainModelArgs) -> Result<()> {
    let index = load_index(file, &args.input).context("train-model (catalog)")?;
    let catalog = load_catalog(file, args.shows)?;
    let graph_path = require(args.graph, file.graph.clone(), "--graph")?;
    let graph = read_graph_tsv_file(&graph_path)
        .with_context(|| format!("train-model (copurchase): reading {}", graph_path.display()))?;
    let hyper = resolve_hyper(file, &args.sgd);
    let negative_seed = resolve_negative_seed(file, &args.sgd);
    let training = assemble_training_set(&index, &graph, &catalog, negative_seed)
        .context("train-model (contentsim): assembling training set")?;
    if training.negative_shortfall > 0 {
        log::warn!(
            "only {} negative pairs exist, {} short of the positive count",
            training.negative_count,
            training.negative_shortfall
        );
    }
    let model = train_sgd(&training, &hyper).context("train-model (contentsim): fitting model")?;
    write_model_json_file(&model, &args.out)
        .with_context(|| format!("train-model (contentsim): writing {}", args.out.display()))?;
    summary(json!({
        "command": "train-model",
        "kind": model.kind.name(),
        "rows": training.rows.len(),
        "positives": training.positive_count,
        "negatives": training.negative_count,
        "final_mse": model.final_mse,
        "out": args.out,
    }));
    Ok(())
}

fn cmd_predict(file: &FileConfig, args: PredictArgs) -> Result<()> {
    let index = load_index(file, &args.input).context("predict (catalog)")?;
    let catalog = load_catalog(file, args.shows)?;
    let graph_path = require(args.graph, file.graph.clone(), "--graph")?;
    let graph = read_graph_tsv_file(&graph_path)
        .with_context(|| format!("predict (copurchase): reading {}", graph_path.display()))?;
    let model_path = require(args.model, file.model.clone(), "--model")?;
    let model = read_model_json_file(&model_path)
        .with_context(|| format!("predict (contentsim): reading {}", model_path.display()))?;
    if model.kind != graph.kind() {
        bail!(
            "predict: model was trained for '{}' but the graph uses '{}'",
            model.kind,
            graph.kind()
        );
    }
    let show_file = std::fs::File::open(&args.show)
        .with_context(|| format!("predict (catalog): opening {}", args.show.display()))?;
    let record: ShowRecord = serde_json::from_reader(std::io::BufReader::new(show_file))
        .with_context(|| format!("predict (catalog): parsing {}", args.show.display()))?;
    let l = require(args.l, file.l, "--l")?;
    let policy = resolve_policy(file, &args.policy)?;

    let augmented = insert_new_show(&graph, &model, &catalog, &record, &policy)
        .context("predict (contentsim): inserting the show")?;
    let state = propagate(&augmented, &record.show_id, l)
        .context("predict (propagation): propagating similarity")?;
    let ranking = rank_users(&index, &augmented, &state);

    let options = EvalOptions {
        kind: graph.kind(),
        propagation_length: l,
        hyper: model.hyper.clone(),
        negative_seed: model.negative_seed,
        policy,
        revenue: RevenueConfig::default(),
    };
    write_ranking_csv_file(&ranking, Some(&options.fingerprint()), &args.top)
        .with_context(|| format!("predict (propagation): writing {}", args.top.display()))?;
    summary(json!({
        "command": "predict",
        "show": record.show_id,
        "edges_added": augmented.edge_count() - graph.edge_count(),
        "users_ranked": ranking.entries.len(),
        "l": l,
        "out": args.top,
    }));
    Ok(())
}

fn cmd_evaluate(file: &FileConfig, args: EvaluateArgs) -> Result<()> {
    let split = resolve_split(
        file,
        args.transactions,
        args.cutoff,
        args.test_sample,
        args.sample_seed,
    )
    .context("evaluate (catalog)")?;
    let catalog = load_catalog(file, args.shows)?;
    let options = EvalOptions {
        kind: resolve_kind(file, args.kind.as_deref())?,
        propagation_length: require(args.l, file.l, "--l")?,
        hyper: resolve_hyper(file, &args.sgd),
        negative_seed: resolve_negative_seed(file, &args.sgd),
        policy: resolve_policy(file, &args.policy)?,
        revenue: resolve_cost(file, args.cost.as_deref())?,
    };
    let report = evaluate(&split, &catalog, &options).context("evaluate (evaluation)")?;
    for failure in &report.failures {
        log::warn!("test show '{}' failed: {}", failure.show_id, failure.error);
    }
    write_report_json_file(&report, &args.out)
        .with_context(|| format!("evaluate (evaluation): writing {}", args.out.display()))?;
    summary(json!({
        "command": "evaluate",
        "kind": options.kind.name(),
        "l": options.propagation_length,
        "test_shows": report.per_show.len(),
        "failures": report.failures.len(),
        "mean_revenue": report.mean_revenue,
        "out": args.out,
    }));
    Ok(())
}

fn cmd_grid_search(file: &FileConfig, args: GridSearchArgs) -> Result<()> {
    let split = resolve_split(
        file,
        args.transactions,
        args.cutoff,
        args.test_sample,
        args.sample_seed,
    )
    .context("grid-search (catalog)")?;
    let catalog = load_catalog(file, args.shows)?;
    let l_values = parse_l_values(&require(args.l, file.l.map(|l| l.to_string()), "--l")?)?;
    let kinds = parse_kinds(&pick(args.kinds, file.kind.clone(), "all".into()))?;
    let settings = GridSettings {
        hyper: resolve_hyper(file, &args.sgd),
        negative_seed: resolve_negative_seed(file, &args.sgd),
        policy: resolve_policy(file, &args.policy)?,
        revenue: resolve_cost(file, args.cost.as_deref())?,
    };
    let grid = grid_search(&split, &catalog, &l_values, &kinds, &settings)
        .context("grid-search (evaluation)")?;
    write_grid_tsv_file(&grid, &args.out_matrix).with_context(|| {
        format!(
            "grid-search (evaluation): writing {}",
            args.out_matrix.display()
        )
    })?;
    if let Some(report_path) = &args.out_report {
        let value = json!({ "format": GRID_TSV_VERSION, "grid": grid });
        std::fs::write(report_path, format!("{:#}\n", value)).with_context(|| {
            format!(
                "grid-search (evaluation): writing {}",
                report_path.display()
            )
        })?;
    }
    let best = grid
        .best_cell()
        .map(|(l, kind, revenue)| json!({ "l": l, "kind": kind.name(), "mean_revenue": revenue }));
    summary(json!({
        "command": "grid-search",
        "cells": l_values.len() * kinds.len(),
        "test_shows": split.test_shows.len(),
        "best": best,
        "out_matrix": args.out_matrix,
    }));
    Ok(())
}

fn cmd_synth(file: &FileConfig, args: SynthArgs) -> Result<()> {
    let spend = match pick(args.spend, file.synth_spend.clone(), String::new()) {
        ref s if s.is_empty() => SpendDistribution::default(),
        s => s.parse()?,
    };
    let spec = SyntheticSpec {
        num_users: pick(args.users, file.synth_users, 5000),
        num_shows: pick(args.shows, file.synth_shows, 500),
        num_communities: pick(args.communities, file.synth_communities, 4),
        feature_noise: pick(args.feature_noise, file.synth_feature_noise, 0.1),
        spend,
        seed: pick(args.seed, file.synth_seed, 7),
    };
    let data = generate_synthetic(&spec).context("synth (evaluation)")?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("synth: creating {}", args.out_dir.display()))?;

    let write =
        |name: &str,
         action: &dyn Fn(&mut std::io::BufWriter<std::fs::File>) -> Result<(), coldrank::Error>|
         -> Result<PathBuf> {
            let path = args.out_dir.join(name);
            let mut sink = std::io::BufWriter::new(
                std::fs::File::create(&path)
                    .with_context(|| format!("synth: creating {}", path.display()))?,
            );
            action(&mut sink).with_context(|| format!("synth: writing {}", path.display()))?;
            std::io::Write::flush(&mut sink)?;
            Ok(path)
        };
    write("transactions.csv", &|sink| {
        write_transactions_csv(&data.transactions, sink)
    })?;
    write("shows.jsonl", &|sink| {
        write_shows_jsonl(&data.catalog, sink)
    })?;
    let communities = json!({
        "format": "coldrank-synth v1",
        "show_community": data.show_community,
        "user_community": data.user_community,
    });
    std::fs::write(
        args.out_dir.join("communities.json"),
        format!("{:#}\n", communities),
    )?;

    summary(json!({
        "command": "synth",
        "users": spec.num_users,
        "shows": spec.num_shows,
        "communities": spec.num_communities,
        "transactions": data.transactions.len(),
        "seed": spec.seed,
        "out_dir": args.out_dir,
    }));
    Ok(())
}
