//! Similarity propagation from an inserted show and user ranking.
//!
//! Mass starts concentrated on the new show and flows along directed
//! edges; after each step the flow vector is normalized to sum to one.
//! Per-step vectors are summed so that alternating patterns (a show whose
//! mass bounces between itself and a single neighbour) still leave a
//! usable profile. A user's preference is the maximum summed similarity
//! among the shows they bought.

use std::io::Write;
use std::path::Path;

use crate::catalog::InteractionIndex;
use crate::copurchase::ItemGraph;
use crate::error::{Error, Result};

/// Version tag in the comment line of exported rankings.
pub const RANKING_CSV_VERSION: &str = "coldrank-ranking v1";

/// How ties are ordered in an [`AudienceRanking`].
pub const TIE_BREAK_RULE: &str = "score-desc,user-id-asc";

/// Similarity mass over graph nodes. Sparse while the support is below
/// 1/8 of the nodes, dense beyond that.
#[derive(Debug, Clone, PartialEq)]
pub enum SimVector {
    /// Nonzero entries, ascending by node.
    Sparse(Vec<(u32, f64)>),
    Dense(Vec<f64>),
}

impl SimVector {
    fn from_buffer(buffer: &[f64]) -> SimVector {
        let support = buffer.iter().filter(|&&v| v != 0.0).count();
        if support * 8 > buffer.len() {
            SimVector::Dense(buffer.to_vec())
        } else {
            SimVector::Sparse(
                buffer
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &v)| (i as u32, v))
                    .collect(),
            )
        }
    }

    pub fn get(&self, node: u32) -> f64 {
        match self {
            SimVector::Sparse(entries) => entries
                .binary_search_by_key(&node, |&(n, _)| n)
                .map(|slot| entries[slot].1)
                .unwrap_or(0.0),
            SimVector::Dense(values) => values.get(node as usize).copied().unwrap_or(0.0),
        }
    }

    pub fn support_len(&self) -> usize {
        match self {
            SimVector::Sparse(entries) => entries.len(),
            SimVector::Dense(values) => values.iter().filter(|&&v| v != 0.0).count(),
        }
    }

    pub fn sum(&self) -> f64 {
        match self {
            SimVector::Sparse(entries) => entries.iter().map(|&(_, v)| v).sum(),
            SimVector::Dense(values) => values.iter().sum(),
        }
    }

    /// Visits nonzero entries in ascending node order.
    pub fn for_each_nonzero(&self, mut visit: impl FnMut(u32, f64)) {
        match self {
            SimVector::Sparse(entries) => {
                for &(node, value) in entries {
                    visit(node, value);
                }
            }
            SimVector::Dense(values) => {
                for (node, &value) in values.iter().enumerate() {
                    if value != 0.0 {
                        visit(node as u32, value);
                    }
                }
            }
        }
    }
}

/// The per-step similarity vectors t_0..t_l and their sum over steps
/// 1..=l. Immutable once returned.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    source: u32,
    steps: Vec<SimVector>,
    summed: SimVector,
}

impl PropagationState {
    pub fn source(&self) -> u32 {
        self.source
    }

    /// t_0 ..= t_l; index 0 is the source indicator.
    pub fn steps(&self) -> &[SimVector] {
        &self.steps
    }

    pub fn step(&self, i: usize) -> &SimVector {
        &self.steps[i]
    }

    /// The propagation length l.
    pub fn step_count(&self) -> usize {
        self.steps.len() - 1
    }

    /// Σ_{1 ≤ i ≤ l} t_i.
    pub fn summed(&self) -> &SimVector {
        &self.summed
    }
}

/// Propagates similarity mass from `source` for `steps` steps.
///
/// Each step computes the raw flow f(s) = Σ_{s'} t_i(s') · w(s' → s) over
/// directed edges and normalizes it by its own sum. A step with zero total
/// flow yields the zero vector, and every later step stays zero.
pub fn propagate(graph: &ItemGraph, source: &str, steps: u32) -> Result<PropagationState> {
    if steps < 1 {
        return Err(Error::InvalidArgument(
            "propagation length must be at least 1".into(),
        ));
    }
    let source = graph
        .lookup(source)
        .ok_or_else(|| Error::UnknownShow(source.to_string()))?;
    let node_count = graph.node_count();

    let mut step_vectors = Vec::with_capacity(steps as usize + 1);
    step_vectors.push(SimVector::Sparse(vec![(source, 1.0)]));
    let mut summed_buffer = vec![0.0f64; node_count];
    let mut dead = false;

    for _ in 0..steps {
        if dead {
            step_vectors.push(SimVector::Sparse(Vec::new()));
            continue;
        }
        let current = step_vectors.last().unwrap();
        let mut flow = vec![0.0f64; node_count];
        current.for_each_nonzero(|node, mass| {
            for &(target, weight) in graph.out_edges(node) {
                flow[target as usize] += mass * weight;
            }
        });
        let total: f64 = flow.iter().sum();
        if total == 0.0 {
            dead = true;
            step_vectors.push(SimVector::Sparse(Vec::new()));
            continue;
        }
        for value in &mut flow {
            *value /= total;
        }
        for (slot, &value) in summed_buffer.iter_mut().zip(&flow) {
            *slot += value;
        }
        step_vectors.push(SimVector::from_buffer(&flow));
    }

    Ok(PropagationState {
        source,
        steps: step_vectors,
        summed: SimVector::from_buffer(&summed_buffer),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedUser {
    pub user_id: String,
    pub score: f64,
}

/// Users ordered by descending preference for the propagated show, ties
/// broken by ascending user id. Contains every user of the index,
/// zero-score users included.
#[derive(Debug, Clone, PartialEq)]
pub struct AudienceRanking {
    pub entries: Vec<RankedUser>,
    pub tie_break: &'static str,
}

/// Scores every user by the maximum summed similarity among their shows.
/// Shows outside the propagation support score 0; the source show never
/// counts towards a user (nobody bought it in a cold start).
pub fn rank_users(
    index: &InteractionIndex,
    graph: &ItemGraph,
    state: &PropagationState,
) -> AudienceRanking {
    let mut show_score = vec![0.0f64; index.show_count()];
    for show in 0..index.show_count() as u32 {
        if let Some(node) = graph.lookup(index.show_id(show)) {
            if node != state.source() {
                show_score[show as usize] = state.summed().get(node);
            }
        }
    }
    let mut entries: Vec<RankedUser> = (0..index.user_count() as u32)
        .map(|user| {
            let score = index
                .shows_of(user)
                .iter()
                .map(|&show| show_score[show as usize])
                .fold(0.0f64, f64::max);
            RankedUser {
                user_id: index.user_id(user).to_string(),
                score,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.user_id.cmp(&b.user_id))
    });
    AudienceRanking {
        entries,
        tie_break: TIE_BREAK_RULE,
    }
}

/// Writes `rank,user_id,score` rows, preceded by a comment line carrying
/// the version tag and an optional configuration fingerprint.
pub fn write_ranking_csv<W: Write>(
    ranking: &AudienceRanking,
    fingerprint: Option<&str>,
    mut sink: W,
) -> Result<()> {
    match fingerprint {
        Some(fp) => writeln!(sink, "# {RANKING_CSV_VERSION} {fp}")?,
        None => writeln!(sink, "# {RANKING_CSV_VERSION}")?,
    }
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(["rank", "user_id", "score"])
        .map_err(|e| Error::Format(format!("ranking csv: {e}")))?;
    for (position, entry) in ranking.entries.iter().enumerate() {
        writer
            .write_record([
                &(position + 1).to_string(),
                &entry.user_id,
                &format!("{:.16e}", entry.score),
            ])
            .map_err(|e| Error::Format(format!("ranking csv: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_ranking_csv_file(
    ranking: &AudienceRanking,
    fingerprint: Option<&str>,
    path: &Path,
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ranking_csv(ranking, fingerprint, &mut file)?;
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{build_index, Transaction};
    use crate::copurchase::WeightFunctionKind;
    use crate::money::Money;

    fn graph_of(labels: &[&str], edges: &[(u32, u32, f64)]) -> ItemGraph {
        ItemGraph::from_edges(
            WeightFunctionKind::Jaccard,
            labels.iter().map(|l| l.to_string()),
            edges,
        )
        .unwrap()
    }

    fn dense(state: &PropagationState, step: usize, n: usize) -> Vec<f64> {
        (0..n as u32)
            .map(|node| state.step(step).get(node))
            .collect()
    }

    #[test]
    fn two_node_mass_alternates() {
        let graph = graph_of(&["new", "A"], &[(0, 1, 1.0), (1, 0, 1.0)]);
        let state = propagate(&graph, "new", 4).unwrap();
        assert_eq!(dense(&state, 0, 2), [1.0, 0.0]);
        assert_eq!(dense(&state, 1, 2), [0.0, 1.0]);
        assert_eq!(dense(&state, 2, 2), [1.0, 0.0]);
        assert_eq!(dense(&state, 3, 2), [0.0, 1.0]);
        assert_eq!(dense(&state, 4, 2), [1.0, 0.0]);
        assert_eq!(state.summed().get(0), 2.0);
        assert_eq!(state.summed().get(1), 2.0);
    }

    #[test]
    fn chain_splits_mass_on_the_way_back() {
        let graph = graph_of(
            &["new", "A", "B"],
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        );
        let state = propagate(&graph, "new", 2).unwrap();
        assert_eq!(dense(&state, 1, 3), [0.0, 1.0, 0.0]);
        assert_eq!(dense(&state, 2, 3), [0.5, 0.0, 0.5]);
        assert_eq!(state.summed().get(0), 0.5);
        assert_eq!(state.summed().get(1), 1.0);
        assert_eq!(state.summed().get(2), 0.5);
    }

    #[test]
    fn isolated_source_stays_at_zero() {
        let graph = graph_of(&["new", "A", "B"], &[(1, 2, 1.0), (2, 1, 1.0)]);
        let state = propagate(&graph, "new", 3).unwrap();
        for step in 1..=3 {
            assert_eq!(state.step(step).support_len(), 0);
        }
        assert_eq!(state.summed().support_len(), 0);
    }

    #[test]
    fn dead_end_goes_and_stays_zero() {
        // Mass reaches A and stops: A has no outgoing edges.
        let graph = graph_of(&["new", "A"], &[(0, 1, 1.0)]);
        let state = propagate(&graph, "new", 3).unwrap();
        assert_eq!(dense(&state, 1, 2), [0.0, 1.0]);
        assert_eq!(state.step(2).support_len(), 0);
        assert_eq!(state.step(3).support_len(), 0);
    }

    #[test]
    fn steps_sum_to_one_while_alive() {
        let graph = graph_of(
            &["new", "A", "B", "C"],
            &[
                (0, 1, 0.7),
                (0, 2, 0.2),
                (1, 0, 0.7),
                (1, 2, 0.4),
                (2, 3, 1.3),
                (3, 1, 0.5),
            ],
        );
        let state = propagate(&graph, "new", 6).unwrap();
        for step in 1..=6 {
            assert!((state.step(step).sum() - 1.0).abs() <= 1e-9, "step {step}");
        }
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let graph = graph_of(&["new", "A"], &[(0, 1, 1.0)]);
        assert!(matches!(
            propagate(&graph, "ghost", 2),
            Err(Error::UnknownShow(_))
        ));
        assert!(matches!(
            propagate(&graph, "new", 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn support_of_the_sum_never_shrinks_with_more_steps() {
        let graph = graph_of(
            &["new", "A", "B", "C"],
            &[
                (0, 1, 1.0),
                (1, 2, 0.5),
                (2, 0, 0.25),
                (2, 3, 0.25),
                (3, 1, 1.0),
            ],
        );
        let mut previous: Vec<u32> = Vec::new();
        for steps in 1..=6 {
            let state = propagate(&graph, "new", steps).unwrap();
            let mut support = Vec::new();
            state
                .summed()
                .for_each_nonzero(|node, _| support.push(node));
            for node in &previous {
                assert!(support.contains(node), "lost node {node} at l={steps}");
            }
            previous = support;
        }
    }

    fn chain_index() -> InteractionIndex {
        // uA bought A; uB bought B; uAB bought both.
        let make = |user: &str, show: &str| Transaction {
            user_id: user.into(),
            show_id: show.into(),
            amount: Money::ZERO,
            timestamp: 0,
        };
        build_index(&[
            make("uA", "A"),
            make("uB", "B"),
            make("uAB", "A"),
            make("uAB", "B"),
        ])
    }

    #[test]
    fn ranking_takes_the_maximum_over_bought_shows() {
        let graph = graph_of(
            &["new", "A", "B"],
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        );
        let state = propagate(&graph, "new", 2).unwrap();
        let ranking = rank_users(&chain_index(), &graph, &state);
        let score = |id: &str| {
            ranking
                .entries
                .iter()
                .find(|e| e.user_id == id)
                .unwrap()
                .score
        };
        assert_eq!(score("uA"), 1.0);
        assert_eq!(score("uB"), 0.5);
        assert_eq!(score("uAB"), 1.0, "max, not sum");
        assert_eq!(ranking.entries.len(), 3);
    }

    #[test]
    fn zero_score_users_are_listed_and_ties_sort_by_id() {
        let graph = graph_of(&["new", "A", "B"], &[(0, 1, 1.0), (1, 0, 1.0)]);
        let state = propagate(&graph, "new", 1).unwrap();
        let make = |user: &str, show: &str| Transaction {
            user_id: user.into(),
            show_id: show.into(),
            amount: Money::ZERO,
            timestamp: 0,
        };
        // Neither z2 nor z1 bought A, so both score 0.
        let index = build_index(&[make("z2", "B"), make("z1", "B"), make("a9", "A")]);
        let ranking = rank_users(&index, &graph, &state);
        let ids: Vec<&str> = ranking.entries.iter().map(|e| e.user_id.as_str()).collect();
        assert_eq!(ids, ["a9", "z1", "z2"]);
        assert_eq!(ranking.entries[1].score, 0.0);
        assert_eq!(ranking.tie_break, TIE_BREAK_RULE);
    }

    #[test]
    fn single_step_ranking_matches_inserted_edge_order() {
        // Inserted edges from "new" with distinct weights; l = 1 must rank
        // users exactly like the raw inserted weights do.
        let graph = graph_of(
            &["new", "A", "B", "C"],
            &[
                (0, 1, 0.9),
                (1, 0, 0.9),
                (0, 2, 0.4),
                (2, 0, 0.4),
                (0, 3, 0.1),
                (3, 0, 0.1),
                (1, 2, 5.0),
            ],
        );
        let make = |user: &str, show: &str| Transaction {
            user_id: user.into(),
            show_id: show.into(),
            amount: Money::ZERO,
            timestamp: 0,
        };
        let index = build_index(&[
            make("u1", "C"),
            make("u2", "A"),
            make("u3", "B"),
            make("u4", "B"),
            make("u4", "C"),
        ]);
        let state = propagate(&graph, "new", 1).unwrap();
        let ranking = rank_users(&index, &graph, &state);

        let inserted_weight = |show: &str| graph.weight_of(0, graph.lookup(show).unwrap());
        let mut expected: Vec<(String, f64)> = ["u1", "u2", "u3", "u4"]
            .iter()
            .map(|&u| {
                let user = index.lookup_user(u).unwrap();
                let best = index
                    .shows_of(user)
                    .iter()
                    .filter_map(|&s| inserted_weight(index.show_id(s)))
                    .fold(0.0f64, f64::max);
                (u.to_string(), best)
            })
            .collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let got: Vec<&str> = ranking.entries.iter().map(|e| e.user_id.as_str()).collect();
        let want: Vec<&str> = expected.iter().map(|(u, _)| u.as_str()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn ranking_csv_has_header_and_full_precision_scores() {
        let ranking = AudienceRanking {
            entries: vec![
                RankedUser {
                    user_id: "u1".into(),
                    score: 2.0 / 3.0,
                },
                RankedUser {
                    user_id: "u2".into(),
                    score: 0.0,
                },
            ],
            tie_break: TIE_BREAK_RULE,
        };
        let mut buffer = Vec::new();
        write_ranking_csv(&ranking, Some("kind=jaccard l=2"), &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "# coldrank-ranking v1 kind=jaccard l=2"
        );
        assert_eq!(lines.next().unwrap(), "rank,user_id,score");
        let row = lines.next().unwrap();
        assert!(row.starts_with("1,u1,"));
        let score: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(score, 2.0 / 3.0);
    }
}
