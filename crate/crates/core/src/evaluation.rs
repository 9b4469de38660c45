//! Holdout evaluation with the optimal-revenue metric, grid search over
//! propagation length and weight function, and a synthetic data generator
//! with planted community structure for desk-scale testing.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{Catalog, HoldoutSplit, InteractionIndex, ShowRecord, Transaction};
use crate::contentsim::{
    assemble_training_set, insert_new_show, train_sgd, InsertionPolicy, LinearModel, SgdHyperParams,
};
use crate::copurchase::{build_graph, ItemGraph, WeightFunctionKind};
use crate::error::{Error, Result};
use crate::money::Money;
use crate::propagation::{propagate, rank_users, AudienceRanking};

/// Version tag in the comment line of grid TSV files.
pub const GRID_TSV_VERSION: &str = "coldrank-grid v1";

/// Version tag in evaluation report files.
pub const REPORT_JSON_VERSION: &str = "coldrank-report v1";

/// Cost model of contacting ranked users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RevenueConfig {
    /// Cost per contacted user, in euros.
    pub communication_cost: Money,
}

impl Default for RevenueConfig {
    fn default() -> RevenueConfig {
        RevenueConfig {
            communication_cost: Money::from_cents(5),
        }
    }
}

/// The best revenue any prefix of the ranking can achieve against the
/// ground-truth spends, and the smallest prefix size attaining it.
///
/// Revenue of a prefix is the total spend of its users minus the
/// communication cost per contact. The empty prefix is admissible, so the
/// result is never negative. Exact integer arithmetic on cents.
pub fn optimal_revenue(
    ranking: &AudienceRanking,
    truth: &BTreeMap<String, Money>,
    config: &RevenueConfig,
) -> (Money, usize) {
    let mut best = Money::ZERO;
    let mut best_size = 0usize;
    let mut cumulative = Money::ZERO;
    for (position, entry) in ranking.entries.iter().enumerate() {
        cumulative += truth.get(&entry.user_id).copied().unwrap_or(Money::ZERO);
        let contacted = position as i64 + 1;
        let revenue = cumulative - config.communication_cost * contacted;
        if revenue > best {
            best = revenue;
            best_size = position + 1;
        }
    }
    (best, best_size)
}

/// Everything one evaluation run depends on; embedded in reports so an
/// artifact pins its own configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOptions {
    pub kind: WeightFunctionKind,
    pub propagation_length: u32,
    pub hyper: SgdHyperParams,
    pub negative_seed: u64,
    pub policy: InsertionPolicy,
    pub revenue: RevenueConfig,
}

impl EvalOptions {
    pub fn new(kind: WeightFunctionKind, propagation_length: u32) -> EvalOptions {
        EvalOptions {
            kind,
            propagation_length,
            hyper: SgdHyperParams::default(),
            negative_seed: 17,
            policy: InsertionPolicy::default(),
            revenue: RevenueConfig::default(),
        }
    }

    /// Compact single-line form for comment-line fingerprints.
    pub fn fingerprint(&self) -> String {
        let l2 = self.hyper.l2.map_or("none".to_string(), |l| l.to_string());
        format!(
            "kind={} l={} lr={} epochs={} shuffle-seed={} l2={} intercept={} negative-seed={} policy={} cost={}",
            self.kind,
            self.propagation_length,
            self.hyper.learning_rate,
            self.hyper.epochs,
            self.hyper.shuffle_seed,
            l2,
            self.hyper.fit_intercept,
            self.negative_seed,
            describe_policy(&self.policy),
            self.revenue.communication_cost,
        )
    }
}

fn describe_policy(policy: &InsertionPolicy) -> String {
    let mode = match policy.mode {
        crate::contentsim::InsertionMode::KeepPositive => "keep-positive".to_string(),
        crate::contentsim::InsertionMode::TopK(k) => format!("top-{k}"),
    };
    let direction = if policy.symmetric {
        "symmetric"
    } else {
        "one-way"
    };
    format!("{mode}+{direction}")
}

/// The per-kind training products reused across propagation lengths.
#[derive(Debug, Clone)]
pub struct TrainedArtifacts {
    pub graph: ItemGraph,
    pub model: LinearModel,
}

/// Builds the collaborative graph and fits the content model on the
/// training index.
pub fn build_artifacts(
    index: &InteractionIndex,
    catalog: &Catalog,
    kind: WeightFunctionKind,
    hyper: &SgdHyperParams,
    negative_seed: u64,
) -> Result<TrainedArtifacts> {
    let graph = build_graph(index, kind);
    let training = assemble_training_set(index, &graph, catalog, negative_seed)?;
    let model = train_sgd(&training, hyper)?;
    Ok(TrainedArtifacts { graph, model })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShowOutcome {
    pub show_id: String,
    pub revenue: Money,
    pub k_star: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShowFailure {
    pub show_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub format: String,
    pub per_show: Vec<ShowOutcome>,
    /// Shows that could not be evaluated, excluded from the mean.
    pub failures: Vec<ShowFailure>,
    /// Arithmetic mean of per-show revenue, in euros.
    pub mean_revenue: f64,
    pub config: EvalOptions,
}

/// Runs insert → propagate → rank → optimal revenue for every test show
/// against prebuilt artifacts. Shows are processed independently (in
/// parallel) and reduced in show-id order; a failing show is reported and
/// excluded from the mean rather than voiding the run.
pub fn evaluate_with_artifacts(
    artifacts: &TrainedArtifacts,
    split: &HoldoutSplit,
    catalog: &Catalog,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    if split.test_shows.is_empty() {
        return Err(Error::Config("no test shows to evaluate".into()));
    }
    let results: Vec<std::result::Result<ShowOutcome, ShowFailure>> = split
        .test_shows
        .par_iter()
        .map(|test| {
            let run = || -> Result<ShowOutcome> {
                let record = catalog
                    .get(&test.show_id)
                    .cloned()
                    .unwrap_or_else(|| ShowRecord::empty(test.show_id.clone()));
                let augmented = insert_new_show(
                    &artifacts.graph,
                    &artifacts.model,
                    catalog,
                    &record,
                    &options.policy,
                )?;
                let state = propagate(&augmented, &test.show_id, options.propagation_length)?;
                let ranking = rank_users(&split.train_index, &augmented, &state);
                let (revenue, k_star) =
                    optimal_revenue(&ranking, &test.spend_by_user, &options.revenue);
                Ok(ShowOutcome {
                    show_id: test.show_id.clone(),
                    revenue,
                    k_star,
                })
            };
            run().map_err(|e| ShowFailure {
                show_id: test.show_id.clone(),
                error: e.to_string(),
            })
        })
        .collect();

    let mut per_show = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(outcome) => per_show.push(outcome),
            Err(failure) => {
                log::warn!("test show '{}' skipped: {}", failure.show_id, failure.error);
                failures.push(failure);
            }
        }
    }
    Ok(EvaluationReport {
        format: REPORT_JSON_VERSION.into(),
        mean_revenue: mean_euros(&per_show),
        per_show,
        failures,
        config: options.clone(),
    })
}

fn mean_euros(outcomes: &[ShowOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let total: i64 = outcomes.iter().map(|o| o.revenue.cents()).sum();
    total as f64 / outcomes.len() as f64 / 100.0
}

/// Trains on the split's training side and evaluates every test show.
pub fn evaluate(
    split: &HoldoutSplit,
    catalog: &Catalog,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    let artifacts = build_artifacts(
        &split.train_index,
        catalog,
        options.kind,
        &options.hyper,
        options.negative_seed,
    )?;
    evaluate_with_artifacts(&artifacts, split, catalog, options)
}

pub fn write_report_json<W: Write>(report: &EvaluationReport, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn write_report_json_file(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_report_json(report, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Settings shared by every cell of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSettings {
    pub hyper: SgdHyperParams,
    pub negative_seed: u64,
    pub policy: InsertionPolicy,
    pub revenue: RevenueConfig,
}

impl Default for GridSettings {
    fn default() -> GridSettings {
        let base = EvalOptions::new(WeightFunctionKind::Jaccard, 1);
        GridSettings {
            hyper: base.hyper,
            negative_seed: base.negative_seed,
            policy: base.policy,
            revenue: base.revenue,
        }
    }
}

impl GridSettings {
    pub fn options(&self, kind: WeightFunctionKind, propagation_length: u32) -> EvalOptions {
        EvalOptions {
            kind,
            propagation_length,
            hyper: self.hyper.clone(),
            negative_seed: self.negative_seed,
            policy: self.policy,
            revenue: self.revenue,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSearchResult {
    pub l_values: Vec<u32>,
    pub kinds: Vec<WeightFunctionKind>,
    /// `mean_revenue[i][j]` is the mean for `(l_values[i], kinds[j])`.
    pub mean_revenue: Vec<Vec<f64>>,
    pub settings: GridSettings,
    #[serde(skip)]
    pub reports: Vec<Vec<EvaluationReport>>,
}

impl GridSearchResult {
    /// The best cell as `(l, kind, mean revenue)`, largest revenue first,
    /// ties towards smaller l and earlier kind column.
    pub fn best_cell(&self) -> Option<(u32, WeightFunctionKind, f64)> {
        let mut best: Option<(u32, WeightFunctionKind, f64)> = None;
        for (i, &l) in self.l_values.iter().enumerate() {
            for (j, &kind) in self.kinds.iter().enumerate() {
                let value = self.mean_revenue[i][j];
                if best.is_none_or(|(_, _, b)| value > b) {
                    best = Some((l, kind, value));
                }
            }
        }
        best
    }
}

/// One evaluation per (l, kind) cell. The graph and model are built once
/// per kind and reused across propagation lengths; targets differ by
/// kind, so the model is refitted for each kind.
pub fn grid_search(
    split: &HoldoutSplit,
    catalog: &Catalog,
    l_values: &[u32],
    kinds: &[WeightFunctionKind],
    settings: &GridSettings,
) -> Result<GridSearchResult> {
    if l_values.is_empty() || kinds.is_empty() {
        return Err(Error::Config(
            "grid search needs at least one propagation length and one weight function".into(),
        ));
    }
    let mut mean_revenue = vec![vec![0.0f64; kinds.len()]; l_values.len()];
    let mut reports: Vec<Vec<EvaluationReport>> = Vec::with_capacity(l_values.len());
    for _ in l_values {
        reports.push(Vec::with_capacity(kinds.len()));
    }
    for (j, &kind) in kinds.iter().enumerate() {
        let artifacts = build_artifacts(
            &split.train_index,
            catalog,
            kind,
            &settings.hyper,
            settings.negative_seed,
        )?;
        for (i, &l) in l_values.iter().enumerate() {
            let options = settings.options(kind, l);
            let report = evaluate_with_artifacts(&artifacts, split, catalog, &options)?;
            mean_revenue[i][j] = report.mean_revenue;
            reports[i].push(report);
        }
    }
    Ok(GridSearchResult {
        l_values: l_values.to_vec(),
        kinds: kinds.to_vec(),
        mean_revenue,
        settings: settings.clone(),
        reports,
    })
}

/// Writes the grid as a TSV matrix: one column per weight function, one
/// row per propagation length, mean revenue in euros.
pub fn write_grid_tsv<W: Write>(result: &GridSearchResult, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "# {GRID_TSV_VERSION} negative-seed={} shuffle-seed={} cost={}",
        result.settings.negative_seed,
        result.settings.hyper.shuffle_seed,
        result.settings.revenue.communication_cost,
    )?;
    let header: Vec<String> = std::iter::once("l".to_string())
        .chain(result.kinds.iter().map(|k| k.name().to_string()))
        .collect();
    writeln!(sink, "{}", header.join("\t"))?;
    for (i, &l) in result.l_values.iter().enumerate() {
        let row: Vec<String> = std::iter::once(l.to_string())
            .chain(result.mean_revenue[i].iter().map(|v| format!("{v:.2}")))
            .collect();
        writeln!(sink, "{}", row.join("\t"))?;
    }
    Ok(())
}

pub fn write_grid_tsv_file(result: &GridSearchResult, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_grid_tsv(result, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Per-purchase spend model of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpendDistribution {
    Fixed(Money),
    Uniform { min: Money, max: Money },
}

impl Default for SpendDistribution {
    fn default() -> SpendDistribution {
        SpendDistribution::Uniform {
            min: Money::from_cents(500),
            max: Money::from_cents(8000),
        }
    }
}

impl SpendDistribution {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Money {
        match *self {
            SpendDistribution::Fixed(amount) => amount,
            SpendDistribution::Uniform { min, max } => {
                Money::from_cents(rng.gen_range(min.cents()..=max.cents()))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SpendDistribution::Fixed(amount) if amount.is_negative() => Err(
                Error::InvalidArgument("fixed spend must be non-negative".into()),
            ),
            SpendDistribution::Uniform { min, max } if min.is_negative() || max < min => Err(
                Error::InvalidArgument("uniform spend needs 0 <= min <= max".into()),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SpendDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpendDistribution::Fixed(amount) => write!(f, "fixed:{amount}"),
            SpendDistribution::Uniform { min, max } => write!(f, "uniform:{min}..{max}"),
        }
    }
}

impl FromStr for SpendDistribution {
    type Err = Error;

    /// Accepts `fixed:<euros>` or `uniform:<min>..<max>`.
    fn from_str(text: &str) -> Result<SpendDistribution> {
        let bad = || {
            Error::InvalidArgument(format!(
                "invalid spend distribution '{text}', expected fixed:<euros> or uniform:<min>..<max>"
            ))
        };
        let (name, args) = text.split_once(':').ok_or_else(bad)?;
        let parsed = match name {
            "fixed" => SpendDistribution::Fixed(Money::parse_euros(args).map_err(|_| bad())?),
            "uniform" => {
                let (min, max) = args.split_once("..").ok_or_else(bad)?;
                SpendDistribution::Uniform {
                    min: Money::parse_euros(min).map_err(|_| bad())?,
                    max: Money::parse_euros(max).map_err(|_| bad())?,
                }
            }
            _ => return Err(bad()),
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_shows: usize,
    pub num_communities: usize,
    /// Probability that a feature or a purchase leaks out of its
    /// community, in [0, 1].
    pub feature_noise: f64,
    pub spend: SpendDistribution,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub transactions: Vec<Transaction>,
    pub catalog: Catalog,
    /// Planted community of each show, for assertions on generated data.
    pub show_community: BTreeMap<String, u32>,
    pub user_community: BTreeMap<String, u32>,
}

/// Seconds between consecutive show release slots; transaction timestamps
/// for a show fall inside its slot, so a cutoff between slots splits
/// shows cleanly.
pub const SYNTHETIC_SLOT_SECONDS: i64 = 86_400;
/// Timestamp of the first synthetic release slot.
pub const SYNTHETIC_BASE_TIME: i64 = 1_600_000_000;

const VENUES_PER_COMMUNITY: usize = 3;
const SUBGENRES_PER_COMMUNITY: usize = 3;
const ARTISTS_PER_COMMUNITY: usize = 6;
const MIN_PURCHASES: usize = 4;
const MAX_PURCHASES: usize = 12;
// Within a community, purchases concentrate on small show clusters. Real
// co-purchase logs are far denser than independence on favourite shows;
// measures that subtract an independence baseline need that concentration
// to score positive.
const CLUSTER_SHOWS: usize = 8;
const CLUSTER_AFFINITY: f64 = 0.75;

/// Release time of synthetic show `i`.
pub fn synthetic_show_time(show: usize) -> i64 {
    SYNTHETIC_BASE_TIME + show as i64 * SYNTHETIC_SLOT_SECONDS
}

/// Generates transactions and a catalog with planted communities: shows
/// take their community's city/venue/types/stakeholders with probability
/// 1 - feature_noise, and users buy inside their community with the same
/// probability. Deterministic given the seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.num_shows == 0 || spec.num_communities == 0 {
        return Err(Error::InvalidArgument(
            "need at least one show and one community".into(),
        ));
    }
    if spec.num_communities > spec.num_shows {
        return Err(Error::InvalidArgument(format!(
            "{} communities cannot be planted in {} shows",
            spec.num_communities, spec.num_shows
        )));
    }
    if !(0.0..=1.0).contains(&spec.feature_noise) {
        return Err(Error::InvalidArgument(
            "feature_noise must be in [0, 1]".into(),
        ));
    }
    spec.spend.validate()?;

    let communities = spec.num_communities as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pick_community = |rng: &mut ChaCha8Rng, own: u32| -> u32 {
        let leak = rng.gen::<f64>() < spec.feature_noise;
        if leak {
            rng.gen_range(0..communities)
        } else {
            own
        }
    };

    let mut catalog = Catalog::new();
    let mut show_community = BTreeMap::new();
    let mut shows_by_community: Vec<Vec<usize>> = vec![Vec::new(); spec.num_communities];
    for show in 0..spec.num_shows {
        let own = (show % spec.num_communities) as u32;
        let show_id = format!("s{show:05}");
        let city = format!("city{:02}", pick_community(&mut rng, own));
        let venue = format!(
            "venue{:02}_{}",
            pick_community(&mut rng, own),
            rng.gen_range(0..VENUES_PER_COMMUNITY)
        );
        let genre = format!("genre{:02}", pick_community(&mut rng, own));
        let subgenre = format!(
            "sub{:02}_{}",
            pick_community(&mut rng, own),
            rng.gen_range(0..SUBGENRES_PER_COMMUNITY)
        );
        let mut stakeholders = std::collections::BTreeSet::new();
        for _ in 0..2 {
            stakeholders.insert(format!(
                "artist{:02}_{}",
                pick_community(&mut rng, own),
                rng.gen_range(0..ARTISTS_PER_COMMUNITY)
            ));
        }
        catalog.insert(ShowRecord {
            show_id: show_id.clone(),
            city: Some(city),
            venue: Some(venue),
            types: [genre, subgenre].into_iter().collect(),
            stakeholders,
            first_sale: Some(synthetic_show_time(show)),
        })?;
        show_community.insert(show_id, own);
        shows_by_community[own as usize].push(show);
    }

    let clusters_in =
        |community: usize| shows_by_community[community].len().div_ceil(CLUSTER_SHOWS);
    let mut transactions = Vec::new();
    let mut user_community = BTreeMap::new();
    for user in 0..spec.num_users {
        let own = (user % spec.num_communities) as u32;
        let user_id = format!("u{user:06}");
        user_community.insert(user_id.clone(), own);
        let home_cluster = rng.gen_range(0..clusters_in(own as usize));
        let purchases = rng.gen_range(MIN_PURCHASES..=MAX_PURCHASES);
        for _ in 0..purchases {
            let community = pick_community(&mut rng, own) as usize;
            let pool = &shows_by_community[community];
            let show = if community == own as usize && rng.gen::<f64>() < CLUSTER_AFFINITY {
                let start = home_cluster * CLUSTER_SHOWS;
                let cluster = &pool[start..pool.len().min(start + CLUSTER_SHOWS)];
                cluster[rng.gen_range(0..cluster.len())]
            } else {
                pool[rng.gen_range(0..pool.len())]
            };
            let amount = spec.spend.sample(&mut rng);
            let timestamp = synthetic_show_time(show) + rng.gen_range(0..SYNTHETIC_SLOT_SECONDS);
            transactions.push(Transaction {
                user_id: user_id.clone(),
                show_id: format!("s{show:05}"),
                amount,
                timestamp,
            });
        }
    }

    Ok(SyntheticData {
        transactions,
        catalog,
        show_community,
        user_community,
    })
}
