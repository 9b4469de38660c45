//! Content-feature similarity, the regression from content similarity to
//! co-purchase weight, and insertion of a brand-new show into the graph.
//!
//! A new show has no purchase history, so its edges cannot be computed
//! from buyer overlap. Instead, a linear model is fitted on known shows,
//! mapping per-category content similarity to the collaborative weight,
//! and the new show is linked to existing shows through its predictions.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, InteractionIndex, ShowRecord};
use crate::copurchase::{weight_idx, ItemGraph, WeightFunctionKind};
use crate::error::{Error, Result};

/// Version tag in persisted model files.
pub const MODEL_JSON_VERSION: &str = "coldrank-model v1";

pub const CATEGORY_COUNT: usize = 4;

/// The fixed feature categories compared between two shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureCategory {
    City,
    Venue,
    Types,
    Stakeholders,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; CATEGORY_COUNT] = [
        FeatureCategory::City,
        FeatureCategory::Venue,
        FeatureCategory::Types,
        FeatureCategory::Stakeholders,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureCategory::City => "city",
            FeatureCategory::Venue => "venue",
            FeatureCategory::Types => "types",
            FeatureCategory::Stakeholders => "stakeholders",
        }
    }
}

/// Per-category content similarity between two shows, each value in
/// [0, 1]. A category missing on either side contributes 0 and sets the
/// corresponding flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSimilarity {
    pub values: [f64; CATEGORY_COUNT],
    pub missing: [bool; CATEGORY_COUNT],
}

fn indicator(a: &Option<String>, b: &Option<String>) -> (f64, bool) {
    match (a, b) {
        (Some(x), Some(y)) => (f64::from(x == y), false),
        _ => (0.0, true),
    }
}

fn set_jaccard(
    a: &std::collections::BTreeSet<String>,
    b: &std::collections::BTreeSet<String>,
) -> (f64, bool) {
    if a.is_empty() || b.is_empty() {
        return (0.0, true);
    }
    let common = a.intersection(b).count();
    let union = a.len() + b.len() - common;
    (common as f64 / union as f64, false)
}

/// Content similarity of two shows: exact-match indicators for city and
/// venue, set Jaccard for types and stakeholders. Symmetric in its
/// arguments.
pub fn pair_features(a: &ShowRecord, b: &ShowRecord) -> FeatureSimilarity {
    let (city, city_missing) = indicator(&a.city, &b.city);
    let (venue, venue_missing) = indicator(&a.venue, &b.venue);
    let (types, types_missing) = set_jaccard(&a.types, &b.types);
    let (stakeholders, stakeholders_missing) = set_jaccard(&a.stakeholders, &b.stakeholders);
    FeatureSimilarity {
        values: [city, venue, types, stakeholders],
        missing: [
            city_missing,
            venue_missing,
            types_missing,
            stakeholders_missing,
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub features: FeatureSimilarity,
    pub target: f64,
}

/// Regression rows: one per stored graph edge (target > 0) plus an equal
/// number of sampled rows with target ≤ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
    pub positive_count: usize,
    pub negative_count: usize,
    /// How many negatives were requested but did not exist.
    pub negative_shortfall: usize,
    pub kind: WeightFunctionKind,
    pub negative_seed: u64,
}

/// Builds the training set for the content-to-collaborative regression.
///
/// Positives are the stored graph edges. Content features are symmetric,
/// so directed kinds use the larger of the two directed weights as the
/// target of both rows of a linked pair. Negatives are a seeded uniform
/// sample of ordered pairs whose unordered pair carries no edge at all;
/// their target is the actual (non-positive) weight, 0 for pairs with no
/// common buyer. If fewer such pairs exist than positives, all are used
/// and the shortfall is recorded.
pub fn assemble_training_set(
    index: &InteractionIndex,
    graph: &ItemGraph,
    catalog: &Catalog,
    negative_seed: u64,
) -> Result<TrainingSet> {
    if graph.edge_count() == 0 {
        return Err(Error::EmptyTrainingSet(
            "graph has no positive edges to learn from".into(),
        ));
    }
    let n = graph.node_count() as u32;
    // Graph nodes must exist in the index (the graph was built from it).
    let to_index: Vec<u32> = (0..n)
        .map(|node| {
            index
                .lookup_show(graph.node_label(node))
                .ok_or_else(|| Error::UnknownShow(graph.node_label(node).to_string()))
        })
        .collect::<Result<_>>()?;
    let fallback = ShowRecord::empty("");
    let record = |node: u32| catalog.get(graph.node_label(node)).unwrap_or(&fallback);
    let features = |a: u32, b: u32| pair_features(record(a), record(b));

    let mut rows: Vec<TrainingRow> = Vec::new();
    let mut linked: HashSet<(u32, u32)> = HashSet::new();
    for (source, target, weight) in graph.edges() {
        let paired = graph.weight_of(target, source);
        let value = paired.map_or(weight, |back| weight.max(back));
        rows.push(TrainingRow {
            features: features(source, target),
            target: value,
        });
        linked.insert((source.min(target), source.max(target)));
    }
    let positive_count = rows.len();

    let ordered_pairs = (n as u64) * (n as u64 - 1);
    let universe = ordered_pairs - 2 * linked.len() as u64;
    let need = positive_count as u64;
    let is_negative_pair = |a: u32, b: u32| a != b && !linked.contains(&(a.min(b), a.max(b)));
    let negative_target = |a: u32, b: u32| {
        let forward = weight_idx(
            graph.kind(),
            index,
            to_index[a as usize],
            to_index[b as usize],
        );
        let backward = weight_idx(
            graph.kind(),
            index,
            to_index[b as usize],
            to_index[a as usize],
        );
        forward.max(backward)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(negative_seed);
    let mut negatives: Vec<(u32, u32)> = Vec::new();
    let negative_shortfall;
    if universe <= need {
        for a in 0..n {
            for b in 0..n {
                if is_negative_pair(a, b) {
                    negatives.push((a, b));
                }
            }
        }
        negative_shortfall = (need - universe) as usize;
    } else {
        negative_shortfall = 0;
        if universe <= 4 * need || ordered_pairs <= 2_000_000 {
            let mut all: Vec<(u32, u32)> = Vec::with_capacity(universe as usize);
            for a in 0..n {
                for b in 0..n {
                    if is_negative_pair(a, b) {
                        all.push((a, b));
                    }
                }
            }
            let (chosen, _) = all.partial_shuffle(&mut rng, need as usize);
            negatives.extend_from_slice(chosen);
        } else {
            let mut taken: HashSet<(u32, u32)> = HashSet::with_capacity(need as usize);
            while (negatives.len() as u64) < need {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if is_negative_pair(a, b) && taken.insert((a, b)) {
                    negatives.push((a, b));
                }
            }
        }
    }
    let negative_count = negatives.len();
    for (a, b) in negatives {
        rows.push(TrainingRow {
            features: features(a, b),
            target: negative_target(a, b),
        });
    }

    Ok(TrainingSet {
        rows,
        positive_count,
        negative_count,
        negative_shortfall,
        kind: graph.kind(),
        negative_seed,
    })
}

/// SGD settings. Every field is recorded in the fitted model so a run can
/// be reproduced from its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdHyperParams {
    pub learning_rate: f64,
    pub epochs: u32,
    pub shuffle_seed: u64,
    pub l2: Option<f64>,
    pub fit_intercept: bool,
}

impl Default for SgdHyperParams {
    fn default() -> SgdHyperParams {
        SgdHyperParams {
            learning_rate: 0.01,
            epochs: 20,
            shuffle_seed: 42,
            l2: None,
            fit_intercept: true,
        }
    }
}

/// Affine model from content similarity to collaborative weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// One coefficient per [`FeatureCategory`], in `FeatureCategory::ALL`
    /// order.
    pub coefficients: [f64; CATEGORY_COUNT],
    pub intercept: f64,
    pub hyper: SgdHyperParams,
    pub negative_seed: u64,
    pub final_mse: f64,
    pub kind: WeightFunctionKind,
}

impl LinearModel {
    pub fn predict(&self, features: &FeatureSimilarity) -> f64 {
        let mut value = self.intercept;
        for (coefficient, x) in self.coefficients.iter().zip(&features.values) {
            value += coefficient * x;
        }
        value
    }
}

/// Predicted collaborative weight for a content-similarity vector.
pub fn predict_weight(model: &LinearModel, features: &FeatureSimilarity) -> f64 {
    model.predict(features)
}

/// Gradient of one row's squared error (pred - target)² with respect to
/// the coefficients and the intercept.
pub fn squared_error_gradient(
    coefficients: &[f64; CATEGORY_COUNT],
    intercept: f64,
    row: &TrainingRow,
) -> ([f64; CATEGORY_COUNT], f64) {
    let mut prediction = intercept;
    for (coefficient, x) in coefficients.iter().zip(&row.features.values) {
        prediction += coefficient * x;
    }
    let residual = prediction - row.target;
    let mut gradient = [0.0; CATEGORY_COUNT];
    for (slot, x) in gradient.iter_mut().zip(&row.features.values) {
        *slot = 2.0 * residual * x;
    }
    (gradient, 2.0 * residual)
}

/// Fits the affine model by per-row gradient steps over shuffled epochs.
/// Deterministic given the shuffle seed. Fails if the loss stops being
/// finite.
pub fn train_sgd(training: &TrainingSet, hyper: &SgdHyperParams) -> Result<LinearModel> {
    if training.rows.is_empty() {
        return Err(Error::EmptyTrainingSet("no rows to train on".into()));
    }
    let mut coefficients = [0.0f64; CATEGORY_COUNT];
    let mut intercept = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.shuffle_seed);
    let mut order: Vec<usize> = (0..training.rows.len()).collect();
    let mut final_mse = f64::NAN;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &row_index in &order {
            let row = &training.rows[row_index];
            let (gradient, intercept_gradient) =
                squared_error_gradient(&coefficients, intercept, row);
            for (slot, g) in coefficients.iter_mut().zip(gradient) {
                let penalty = hyper.l2.map_or(0.0, |lambda| 2.0 * lambda * *slot);
                *slot -= hyper.learning_rate * (g + penalty);
            }
            if hyper.fit_intercept {
                intercept -= hyper.learning_rate * intercept_gradient;
            }
        }
        final_mse = mean_squared_error(&coefficients, intercept, &training.rows);
        if !final_mse.is_finite() {
            return Err(Error::Divergence { epoch });
        }
    }

    Ok(LinearModel {
        coefficients,
        intercept,
        hyper: hyper.clone(),
        negative_seed: training.negative_seed,
        final_mse,
        kind: training.kind,
    })
}

fn mean_squared_error(
    coefficients: &[f64; CATEGORY_COUNT],
    intercept: f64,
    rows: &[TrainingRow],
) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|row| {
            let mut prediction = intercept;
            for (coefficient, x) in coefficients.iter().zip(&row.features.values) {
                prediction += coefficient * x;
            }
            let residual = prediction - row.target;
            residual * residual
        })
        .sum();
    total / rows.len() as f64
}

/// Which predicted edges to keep when inserting a new show.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InsertionMode {
    /// Keep every edge with a positive predicted weight.
    KeepPositive,
    /// Keep only the K largest positive predictions.
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionPolicy {
    pub mode: InsertionMode,
    /// When set, each kept prediction becomes an edge in both directions.
    /// Otherwise only outgoing edges from the new show are added.
    pub symmetric: bool,
}

impl Default for InsertionPolicy {
    fn default() -> InsertionPolicy {
        InsertionPolicy {
            mode: InsertionMode::KeepPositive,
            symmetric: true,
        }
    }
}

/// Inserts `s_new` into the graph using predicted weights against every
/// existing show. Pre-existing edges are never touched.
pub fn insert_new_show(
    graph: &ItemGraph,
    model: &LinearModel,
    catalog: &Catalog,
    s_new: &ShowRecord,
    policy: &InsertionPolicy,
) -> Result<ItemGraph> {
    if graph.lookup(&s_new.show_id).is_some() {
        return Err(Error::ShowAlreadyPresent(s_new.show_id.clone()));
    }
    if let InsertionMode::TopK(0) = policy.mode {
        return Err(Error::InvalidArgument(
            "top-k insertion needs k >= 1".into(),
        ));
    }

    let existing = graph.node_count() as u32;
    let fallback = ShowRecord::empty("");
    let mut kept: Vec<(u32, f64)> = (0..existing)
        .filter_map(|node| {
            let record = catalog.get(graph.node_label(node)).unwrap_or(&fallback);
            let predicted = model.predict(&pair_features(s_new, record));
            (predicted > 0.0).then_some((node, predicted))
        })
        .collect();
    if let InsertionMode::TopK(k) = policy.mode {
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(k);
        kept.sort_by_key(|&(node, _)| node);
    }

    let mut augmented = graph.clone();
    let new_node = augmented.add_node(s_new.show_id.clone())?;
    for &(node, predicted) in &kept {
        augmented.add_edge(new_node, node, predicted)?;
        if policy.symmetric {
            augmented.add_edge(node, new_node, predicted)?;
        }
    }
    Ok(augmented)
}

// Persisted form: coefficients keyed by category name, as documented.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    weight_function_kind: WeightFunctionKind,
    coefficients: CoefficientsByName,
    intercept: f64,
    hyperparameters: HyperparametersFile,
    seed: u64,
    final_mse: f64,
}

#[derive(Serialize, Deserialize)]
struct CoefficientsByName {
    city: f64,
    venue: f64,
    types: f64,
    stakeholders: f64,
}

#[derive(Serialize, Deserialize)]
struct HyperparametersFile {
    learning_rate: f64,
    epochs: u32,
    l2: Option<f64>,
    fit_intercept: bool,
    negative_seed: u64,
}

pub fn write_model_json<W: Write>(model: &LinearModel, mut sink: W) -> Result<()> {
    let [city, venue, types, stakeholders] = model.coefficients;
    let file = ModelFile {
        format: MODEL_JSON_VERSION.into(),
        weight_function_kind: model.kind,
        coefficients: CoefficientsByName {
            city,
            venue,
            types,
            stakeholders,
        },
        intercept: model.intercept,
        hyperparameters: HyperparametersFile {
            learning_rate: model.hyper.learning_rate,
            epochs: model.hyper.epochs,
            l2: model.hyper.l2,
            fit_intercept: model.hyper.fit_intercept,
            negative_seed: model.negative_seed,
        },
        seed: model.hyper.shuffle_seed,
        final_mse: model.final_mse,
    };
    serde_json::to_writer_pretty(&mut sink, &file)
        .map_err(|e| Error::Format(format!("model serialization: {e}")))?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn write_model_json_file(model: &LinearModel, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model_json(model, &mut file)?;
    std::io::Write::flush(&mut file)?;
    Ok(())
}

pub fn read_model_json<R: Read>(source: R) -> Result<LinearModel> {
    let file: ModelFile =
        serde_json::from_reader(source).map_err(|e| Error::Format(format!("model json: {e}")))?;
    if file.format != MODEL_JSON_VERSION {
        return Err(Error::Format(format!(
            "model json: unsupported format tag '{}'",
            file.format
        )));
    }
    Ok(LinearModel {
        coefficients: [
            file.coefficients.city,
            file.coefficients.venue,
            file.coefficients.types,
            file.coefficients.stakeholders,
        ],
        intercept: file.intercept,
        hyper: SgdHyperParams {
            learning_rate: file.hyperparameters.learning_rate,
            epochs: file.hyperparameters.epochs,
            shuffle_seed: file.seed,
            l2: file.hyperparameters.l2,
            fit_intercept: file.hyperparameters.fit_intercept,
        },
        negative_seed: file.hyperparameters.negative_seed,
        final_mse: file.final_mse,
        kind: file.weight_function_kind,
    })
}

pub fn read_model_json_file(path: &Path) -> Result<LinearModel> {
    let file = std::fs::File::open(path)?;
    read_model_json(std::io::BufReader::new(file))
}
