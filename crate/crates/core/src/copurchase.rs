//! Co-purchase weight functions and the sparse directed item-item graph.
//!
//! Each weight measures how similar two shows are in terms of the people
//! who bought tickets for them. Only pairs with at least one common buyer
//! can score positive, so the graph is built from candidate pairs
//! enumerated user by user, never from all show pairs.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::InteractionIndex;
use crate::error::{Error, Result};

/// Version tag in the comment line of graph TSV files.
pub const GRAPH_TSV_VERSION: &str = "coldrank-graph v1";

/// The implemented co-purchase weights. Notation: U(s) buyers of s,
/// k_s = |U(s)|, S(u) shows of u, k_u = |S(u)|, n = |U(s1) ∩ U(s2)|.
///
/// - `Amazon`: (n - Σ_{u ∈ U(s1)} [1 - (1 - k_{s2}/Σ_s k_s)^(k_u - 1)]) / √n
/// - `Jaccard`: n / |U(s1) ∪ U(s2)|
/// - `JaccardAsym`: n / k_{s1}
/// - `Nbi`: (1/k_{s1}) Σ_{u ∈ both} 1/k_u
/// - `Mdw`: (1/max(k_{s1}, k_{s2})) Σ_{u ∈ both} 1/(k_u - 1)
/// - `MdwAsym`: (1/k_{s1}) Σ_{u ∈ both} 1/(k_u - 1)
/// - `Bp`: (n - k_{s1} k_{s2}/|S|) / √(k_{s1}(1 - k_{s1}/|S|) k_{s2}(1 - k_{s2}/|S|))
///
/// Degenerate cases return 0: an empty buyer intersection for every kind,
/// and a non-positive product under the `Bp` square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFunctionKind {
    Amazon,
    Bp,
    Jaccard,
    JaccardAsym,
    Mdw,
    MdwAsym,
    Nbi,
}

impl WeightFunctionKind {
    /// Every kind, in the column order used by grid-search output.
    pub const ALL: [WeightFunctionKind; 7] = [
        WeightFunctionKind::Amazon,
        WeightFunctionKind::Bp,
        WeightFunctionKind::Jaccard,
        WeightFunctionKind::JaccardAsym,
        WeightFunctionKind::Mdw,
        WeightFunctionKind::MdwAsym,
        WeightFunctionKind::Nbi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightFunctionKind::Amazon => "amazon",
            WeightFunctionKind::Bp => "bp",
            WeightFunctionKind::Jaccard => "jaccard",
            WeightFunctionKind::JaccardAsym => "jaccard-asym",
            WeightFunctionKind::Mdw => "mdw",
            WeightFunctionKind::MdwAsym => "mdw-asym",
            WeightFunctionKind::Nbi => "nbi",
        }
    }

    /// Whether w(a, b) = w(b, a) holds by construction. The Amazon weight
    /// is directional as written, like the explicit -asym variants.
    pub fn is_symmetric(self) -> bool {
        matches!(
            self,
            WeightFunctionKind::Jaccard | WeightFunctionKind::Mdw | WeightFunctionKind::Bp
        )
    }
}

impl fmt::Display for WeightFunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightFunctionKind {
    type Err = Error;

    fn from_str(text: &str) -> Result<WeightFunctionKind> {
        WeightFunctionKind::ALL
            .into_iter()
            .find(|k| k.name() == text)
            .ok_or_else(|| {
                let names: Vec<&str> = WeightFunctionKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown weight function '{text}', expected one of {names:?}"
                ))
            })
    }
}

fn for_each_common_buyer(a: &[u32], b: &[u32], mut visit: impl FnMut(u32)) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                visit(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
}

/// (1 - p)^n, switching to log space for large n to avoid underflow.
fn pow_one_minus(p: f64, n: u64) -> f64 {
    if n <= 64 {
        (1.0 - p).powi(n as i32)
    } else {
        (n as f64 * (-p).ln_1p()).exp()
    }
}

/// The co-purchase weight for a pair of dense show indices. Pure in the
/// index; pairs with no common buyer return 0 by convention.
pub fn weight_idx(kind: WeightFunctionKind, index: &InteractionIndex, s1: u32, s2: u32) -> f64 {
    debug_assert_ne!(s1, s2, "weight of a show with itself is undefined");
    let buyers1 = index.buyers_of(s1);
    let buyers2 = index.buyers_of(s2);

    let mut common = 0u64;
    let mut inv_degree = 0.0f64;
    let mut inv_degree_less_one = 0.0f64;
    for_each_common_buyer(buyers1, buyers2, |user| {
        common += 1;
        let k = index.user_degree(user);
        // Anyone who bought both shows bought at least two shows.
        debug_assert!(k >= 2);
        inv_degree += 1.0 / k as f64;
        inv_degree_less_one += 1.0 / (k - 1) as f64;
    });
    if common == 0 {
        return 0.0;
    }

    let n = common as f64;
    let k1 = buyers1.len() as f64;
    let k2 = buyers2.len() as f64;
    match kind {
        WeightFunctionKind::Jaccard => n / (k1 + k2 - n),
        WeightFunctionKind::JaccardAsym => n / k1,
        WeightFunctionKind::Nbi => inv_degree / k1,
        WeightFunctionKind::Mdw => inv_degree_less_one / k1.max(k2),
        WeightFunctionKind::MdwAsym => inv_degree_less_one / k1,
        WeightFunctionKind::Bp => {
            let shows = index.show_count() as f64;
            let variance = k1 * (1.0 - k1 / shows) * (k2 * (1.0 - k2 / shows));
            if variance <= 0.0 {
                0.0
            } else {
                (n - k1 * k2 / shows) / variance.sqrt()
            }
        }
        WeightFunctionKind::Amazon => {
            let p = k2 / index.degree_sum() as f64;
            let mut expected = 0.0;
            for &user in buyers1 {
                let others = index.user_degree(user) as u64 - 1;
                expected += 1.0 - pow_one_minus(p, others);
            }
            (n - expected) / n.sqrt()
        }
    }
}

/// The co-purchase weight addressed by show id.
pub fn weight(
    kind: WeightFunctionKind,
    index: &InteractionIndex,
    s1: &str,
    s2: &str,
) -> Result<f64> {
    let a = index
        .lookup_show(s1)
        .ok_or_else(|| Error::UnknownShow(s1.to_string()))?;
    let b = index
        .lookup_show(s2)
        .ok_or_else(|| Error::UnknownShow(s2.to_string()))?;
    if a == b {
        return Err(Error::InvalidArgument(format!(
            "weight of show '{s1}' with itself is undefined"
        )));
    }
    Ok(weight_idx(kind, index, a, b))
}

/// All ordered show pairs sharing at least one buyer, ascending. These are
/// the only pairs that can carry a positive weight. Enumeration walks each
/// user's shows, so the work is bounded by Σ_u k_u², not |S|².
pub fn candidate_pairs(index: &InteractionIndex) -> Vec<(u32, u32)> {
    let mut pairs: HashSet<(u32, u32)> = HashSet::new();
    for user in 0..index.user_count() as u32 {
        let shows = index.shows_of(user);
        for (i, &a) in shows.iter().enumerate() {
            for &b in &shows[i + 1..] {
                if pairs.insert((a, b)) {
                    pairs.insert((b, a));
                }
            }
        }
    }
    let mut pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
    pairs.sort_unstable();
    pairs
}

/// Sparse directed item-item graph. Every node is a show of the source
/// index; only positive-weight edges are stored, source-major and sorted
/// by target, with no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemGraph {
    kind: WeightFunctionKind,
    labels: Vec<String>,
    lookup: HashMap<String, u32>,
    adjacency: Vec<Vec<(u32, f64)>>,
}

impl ItemGraph {
    /// An edgeless graph over the given node labels.
    pub fn with_nodes(
        kind: WeightFunctionKind,
        labels: impl IntoIterator<Item = String>,
    ) -> Result<ItemGraph> {
        let mut graph = ItemGraph {
            kind,
            labels: Vec::new(),
            lookup: HashMap::new(),
            adjacency: Vec::new(),
        };
        for label in labels {
            graph.add_node(label)?;
        }
        Ok(graph)
    }

    /// Builds a graph from explicit edges; mostly useful in tests and when
    /// loading persisted graphs.
    pub fn from_edges(
        kind: WeightFunctionKind,
        labels: impl IntoIterator<Item = String>,
        edges: &[(u32, u32, f64)],
    ) -> Result<ItemGraph> {
        let mut graph = ItemGraph::with_nodes(kind, labels)?;
        for &(source, target, weight) in edges {
            graph.add_edge(source, target, weight)?;
        }
        Ok(graph)
    }

    pub fn add_node(&mut self, label: impl Into<String>) -> Result<u32> {
        let label = label.into();
        if label.is_empty() || label.chars().any(|c| c.is_control()) {
            return Err(Error::InvalidArgument(format!(
                "invalid node label {label:?}"
            )));
        }
        if self.lookup.contains_key(&label) {
            return Err(Error::ShowAlreadyPresent(label));
        }
        let node = self.labels.len() as u32;
        self.lookup.insert(label.clone(), node);
        self.labels.push(label);
        self.adjacency.push(Vec::new());
        Ok(node)
    }

    pub fn add_edge(&mut self, source: u32, target: u32, weight: f64) -> Result<()> {
        if source == target {
            return Err(Error::InvalidArgument("self-loops are not stored".into()));
        }
        if weight.is_nan() || weight <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "edge weight must be positive, got {weight}"
            )));
        }
        if source as usize >= self.labels.len() || target as usize >= self.labels.len() {
            return Err(Error::InvalidArgument("edge endpoint out of range".into()));
        }
        let row = &mut self.adjacency[source as usize];
        match row.binary_search_by_key(&target, |&(t, _)| t) {
            Ok(_) => Err(Error::InvalidArgument(format!(
                "duplicate edge {source}->{target}"
            ))),
            Err(slot) => {
                row.insert(slot, (target, weight));
                Ok(())
            }
        }
    }

    pub fn kind(&self) -> WeightFunctionKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn node_label(&self, node: u32) -> &str {
        &self.labels[node as usize]
    }

    pub fn lookup(&self, label: &str) -> Option<u32> {
        self.lookup.get(label).copied()
    }

    /// Outgoing edges of a node, sorted by target.
    pub fn out_edges(&self, node: u32) -> &[(u32, f64)] {
        &self.adjacency[node as usize]
    }

    pub fn weight_of(&self, source: u32, target: u32) -> Option<f64> {
        let row = &self.adjacency[source as usize];
        row.binary_search_by_key(&target, |&(t, _)| t)
            .ok()
            .map(|slot| row[slot].1)
    }

    /// All edges in (source, target) order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(source, row)| {
            row.iter()
                .map(move |&(target, weight)| (source as u32, target, weight))
        })
    }
}

/// Builds the collaborative item-item graph: one node per indexed show,
/// one edge per candidate pair with positive weight. Deterministic given
/// index and kind; pair weights are evaluated in parallel but merged in
/// pair order.
pub fn build_graph(index: &InteractionIndex, kind: WeightFunctionKind) -> ItemGraph {
    let pairs = candidate_pairs(index);
    let weights: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| weight_idx(kind, index, a, b))
        .collect();

    let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); index.show_count()];
    for (&(source, target), &weight) in pairs.iter().zip(&weights) {
        if weight > 0.0 {
            adjacency[source as usize].push((target, weight));
        }
    }
    let labels: Vec<String> = index.show_ids().map(String::from).collect();
    let lookup = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i as u32))
        .collect();
    ItemGraph {
        kind,
        labels,
        lookup,
        adjacency,
    }
}

/// Writes the graph as a TSV edge list. The leading comment records the
/// weight-function kind; `# n` comments preserve the node table so a
/// reload reproduces the graph exactly, isolated nodes included.
pub fn write_graph_tsv<W: Write>(graph: &ItemGraph, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "# {GRAPH_TSV_VERSION} kind={} nodes={}",
        graph.kind.name(),
        graph.node_count()
    )?;
    for label in &graph.labels {
        writeln!(sink, "# n {label}")?;
    }
    for (source, target, weight) in graph.edges() {
        writeln!(
            sink,
            "{}\t{}\t{:.16e}",
            graph.node_label(source),
            graph.node_label(target),
            weight
        )?;
    }
    Ok(())
}

pub fn write_graph_tsv_file(graph: &ItemGraph, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_graph_tsv(graph, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn read_graph_tsv<R: BufRead>(source: R) -> Result<ItemGraph> {
    let bad = |msg: String| Error::Format(format!("graph tsv: {msg}"));
    let mut lines = source.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let rest = header
        .strip_prefix(&format!("# {GRAPH_TSV_VERSION} kind="))
        .ok_or_else(|| bad(format!("unsupported header '{header}'")))?;
    let (kind, nodes) = rest
        .split_once(" nodes=")
        .ok_or_else(|| bad("missing node count".into()))?;
    let kind: WeightFunctionKind = kind.parse()?;
    let node_count: usize = nodes.parse().map_err(|_| bad("bad node count".into()))?;

    let mut graph = ItemGraph::with_nodes(kind, std::iter::empty())?;
    for line in lines {
        let line = line?;
        if let Some(label) = line.strip_prefix("# n ") {
            graph.add_node(label)?;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (source, target, weight) = match (fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(t), Some(w)) if fields.next().is_none() => (s, t, w),
            _ => return Err(bad(format!("expected 3 tab-separated fields in '{line}'"))),
        };
        let source = graph
            .lookup(source)
            .ok_or_else(|| bad(format!("edge references undeclared node '{source}'")))?;
        let target = graph
            .lookup(target)
            .ok_or_else(|| bad(format!("edge references undeclared node '{target}'")))?;
        let weight: f64 = weight
            .parse()
            .map_err(|_| bad(format!("bad weight '{weight}'")))?;
        graph.add_edge(source, target, weight)?;
    }
    if graph.node_count() != node_count {
        return Err(bad(format!(
            "expected {node_count} nodes, found {}",
            graph.node_count()
        )));
    }
    Ok(graph)
}

pub fn read_graph_tsv_file(path: &Path) -> Result<ItemGraph> {
    let file = std::fs::File::open(path)?;
    read_graph_tsv(std::io::BufReader::new(file))
}
