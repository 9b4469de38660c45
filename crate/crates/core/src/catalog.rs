//! Transactions, show descriptions, the user/show interaction index, and
//! temporal holdout splitting.
//!
//! Identifiers are opaque strings at the boundary and dense `u32` indices
//! internally; the index is immutable once built and safe to share across
//! threads.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::money::Money;

/// Version tag on the first line of index cache files.
pub const INDEX_CACHE_VERSION: &str = "coldrank-index v1";

/// How many malformed-row samples an [`IngestReport`] retains.
pub const MALFORMED_SAMPLE_LIMIT: usize = 10;

/// A single ticket purchase event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub user_id: String,
    pub show_id: String,
    /// Non-negative amount paid, in euros.
    pub amount: Money,
    /// UTC seconds.
    pub timestamp: i64,
}

/// Content description of a show. Absent fields are missing data, not empty
/// values; `types` and `stakeholders` are order-free sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShowRecord {
    pub show_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default)]
    pub types: BTreeSet<String>,
    #[serde(default)]
    pub stakeholders: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_sale: Option<i64>,
}

impl ShowRecord {
    /// A record with every feature missing.
    pub fn empty(show_id: impl Into<String>) -> ShowRecord {
        ShowRecord {
            show_id: show_id.into(),
            city: None,
            venue: None,
            types: BTreeSet::new(),
            stakeholders: BTreeSet::new(),
            first_sale: None,
        }
    }
}

/// All show records of a data set, keyed by show id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    records: BTreeMap<String, ShowRecord>,
}

impl Catalog {
    pub fn new() -> Catalog {
        Catalog::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = ShowRecord>) -> Result<Catalog> {
        let mut catalog = Catalog::new();
        for record in records {
            catalog.insert(record)?;
        }
        Ok(catalog)
    }

    /// Fails on a duplicate show id.
    pub fn insert(&mut self, record: ShowRecord) -> Result<()> {
        if self.records.contains_key(&record.show_id) {
            return Err(Error::Format(format!(
                "duplicate show id '{}' in catalog",
                record.show_id
            )));
        }
        self.records.insert(record.show_id.clone(), record);
        Ok(())
    }

    pub fn get(&self, show_id: &str) -> Option<&ShowRecord> {
        self.records.get(show_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in ascending show-id order.
    pub fn iter(&self) -> impl Iterator<Item = &ShowRecord> {
        self.records.values()
    }
}

/// Column mapping for transaction CSV files. The defaults match the
/// standard header `user_id,show_id,amount,timestamp`.
#[derive(Debug, Clone)]
pub struct TransactionFormat {
    pub user_id: String,
    pub show_id: String,
    pub amount: String,
    pub timestamp: String,
}

impl Default for TransactionFormat {
    fn default() -> TransactionFormat {
        TransactionFormat {
            user_id: "user_id".into(),
            show_id: "show_id".into(),
            amount: "amount".into(),
            timestamp: "timestamp".into(),
        }
    }
}

/// Outcome of transaction ingestion. Malformed rows are counted and
/// sampled, never silently dropped.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub transactions: Vec<Transaction>,
    pub malformed_count: usize,
    /// Up to [`MALFORMED_SAMPLE_LIMIT`] `(line, reason)` samples.
    pub malformed_samples: Vec<(u64, String)>,
}

impl IngestReport {
    fn reject(&mut self, line: u64, reason: String) {
        self.malformed_count += 1;
        if self.malformed_samples.len() < MALFORMED_SAMPLE_LIMIT {
            self.malformed_samples.push((line, reason));
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_control())
}

/// Reads transactions from CSV. The header must contain the four columns
/// declared by `format` (extra columns are ignored, order is free).
pub fn ingest_transactions<R: Read>(source: R, format: &TransactionFormat) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    let find = |name: &str| headers.iter().position(|h| h == name);
    let wanted = [
        &format.user_id,
        &format.show_id,
        &format.amount,
        &format.timestamp,
    ];
    let columns: Vec<Option<usize>> = wanted.iter().map(|n| find(n)).collect();
    let missing: Vec<&str> = wanted
        .iter()
        .zip(&columns)
        .filter(|(_, c)| c.is_none())
        .map(|(n, _)| n.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format(format!(
            "transactions header mismatch: missing columns {missing:?}, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let (user_col, show_col, amount_col, time_col) = (
        columns[0].unwrap(),
        columns[1].unwrap(),
        columns[2].unwrap(),
        columns[3].unwrap(),
    );

    let mut report = IngestReport::default();
    for (row_index, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(csv_error(e));
                }
                report.reject(row_index as u64 + 2, e.to_string());
                continue;
            }
        };
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(row_index as u64 + 2);
        let field = |col: usize| record.get(col);
        let (user, show, amount, time) = match (
            field(user_col),
            field(show_col),
            field(amount_col),
            field(time_col),
        ) {
            (Some(u), Some(s), Some(a), Some(t)) => (u, s, a, t),
            _ => {
                report.reject(line, format!("row has {} fields", record.len()));
                continue;
            }
        };
        if !valid_id(user) {
            report.reject(line, format!("invalid user_id {user:?}"));
            continue;
        }
        if !valid_id(show) {
            report.reject(line, format!("invalid show_id {show:?}"));
            continue;
        }
        let amount = match Money::parse_euros(amount) {
            Ok(a) if !a.is_negative() => a,
            Ok(_) => {
                report.reject(line, format!("negative amount '{amount}'"));
                continue;
            }
            Err(_) => {
                report.reject(line, format!("invalid amount '{amount}'"));
                continue;
            }
        };
        let timestamp = match time.trim().parse::<i64>() {
            Ok(t) => t,
            Err(_) => {
                report.reject(line, format!("invalid timestamp '{time}'"));
                continue;
            }
        };
        report.transactions.push(Transaction {
            user_id: user.to_string(),
            show_id: show.to_string(),
            amount,
            timestamp,
        });
    }
    Ok(report)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

pub fn ingest_transactions_file(path: &Path, format: &TransactionFormat) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_transactions(BufReader::new(file), format)
}

/// Writes transactions with the standard header.
pub fn write_transactions_csv<W: Write>(transactions: &[Transaction], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(["user_id", "show_id", "amount", "timestamp"])
        .map_err(csv_error)?;
    for t in transactions {
        writer
            .write_record([
                t.user_id.as_str(),
                t.show_id.as_str(),
                &t.amount.to_string(),
                &t.timestamp.to_string(),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads show records from JSON lines; blank lines are skipped.
pub fn ingest_shows<R: BufRead>(source: R) -> Result<Catalog> {
    let mut catalog = Catalog::new();
    for (number, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ShowRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("shows line {}: {e}", number + 1)))?;
        if !valid_id(&record.show_id) {
            return Err(Error::Format(format!(
                "shows line {}: invalid show_id {:?}",
                number + 1,
                record.show_id
            )));
        }
        catalog.insert(record)?;
    }
    Ok(catalog)
}

pub fn ingest_shows_file(path: &Path) -> Result<Catalog> {
    let file = std::fs::File::open(path)?;
    ingest_shows(BufReader::new(file))
}

/// Writes one JSON object per show, in ascending show-id order.
pub fn write_shows_jsonl<W: Write>(catalog: &Catalog, mut sink: W) -> Result<()> {
    for record in catalog.iter() {
        serde_json::to_writer(&mut sink, record)
            .map_err(|e| Error::Format(format!("shows serialization: {e}")))?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Bipartite user/show purchase structure with degree caches. Repeat
/// purchases of the same show by the same user collapse to one membership.
///
/// Dense ids are assigned in first-appearance order of the transaction
/// list, so the same input always produces the same index.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionIndex {
    user_ids: Vec<String>,
    show_ids: Vec<String>,
    user_lookup: HashMap<String, u32>,
    show_lookup: HashMap<String, u32>,
    /// Sorted show indices per user: S(u).
    shows_of: Vec<Vec<u32>>,
    /// Sorted user indices per show: U(s).
    buyers_of: Vec<Vec<u32>>,
    degree_sum: u64,
}

impl InteractionIndex {
    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    /// Number of shows |S|.
    pub fn show_count(&self) -> usize {
        self.show_ids.len()
    }

    /// Sum of show degrees, which equals the sum of user degrees.
    pub fn degree_sum(&self) -> u64 {
        self.degree_sum
    }

    pub fn user_id(&self, user: u32) -> &str {
        &self.user_ids[user as usize]
    }

    pub fn show_id(&self, show: u32) -> &str {
        &self.show_ids[show as usize]
    }

    pub fn lookup_user(&self, id: &str) -> Option<u32> {
        self.user_lookup.get(id).copied()
    }

    pub fn lookup_show(&self, id: &str) -> Option<u32> {
        self.show_lookup.get(id).copied()
    }

    /// S(u), sorted.
    pub fn shows_of(&self, user: u32) -> &[u32] {
        &self.shows_of[user as usize]
    }

    /// U(s), sorted.
    pub fn buyers_of(&self, show: u32) -> &[u32] {
        &self.buyers_of[show as usize]
    }

    /// k_u.
    pub fn user_degree(&self, user: u32) -> usize {
        self.shows_of[user as usize].len()
    }

    /// k_s.
    pub fn show_degree(&self, show: u32) -> usize {
        self.buyers_of[show as usize].len()
    }

    pub fn show_ids(&self) -> impl Iterator<Item = &str> {
        self.show_ids.iter().map(String::as_str)
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.user_ids.iter().map(String::as_str)
    }
}

/// Builds the interaction index. Duplicate (user, show) purchases collapse
/// to one membership.
pub fn build_index(transactions: &[Transaction]) -> InteractionIndex {
    let mut user_lookup: HashMap<String, u32> = HashMap::new();
    let mut show_lookup: HashMap<String, u32> = HashMap::new();
    let mut user_ids: Vec<String> = Vec::new();
    let mut show_ids: Vec<String> = Vec::new();
    let mut shows_of: Vec<Vec<u32>> = Vec::new();
    let mut buyers_of: Vec<Vec<u32>> = Vec::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::with_capacity(transactions.len());

    for t in transactions {
        let user = *user_lookup.entry(t.user_id.clone()).or_insert_with(|| {
            user_ids.push(t.user_id.clone());
            shows_of.push(Vec::new());
            (user_ids.len() - 1) as u32
        });
        let show = *show_lookup.entry(t.show_id.clone()).or_insert_with(|| {
            show_ids.push(t.show_id.clone());
            buyers_of.push(Vec::new());
            (show_ids.len() - 1) as u32
        });
        if seen.insert((user, show)) {
            shows_of[user as usize].push(show);
            buyers_of[show as usize].push(user);
        }
    }
    for list in &mut shows_of {
        list.sort_unstable();
    }
    for list in &mut buyers_of {
        list.sort_unstable();
    }
    let degree_sum = buyers_of.iter().map(|b| b.len() as u64).sum();

    InteractionIndex {
        user_ids,
        show_ids,
        user_lookup,
        show_lookup,
        shows_of,
        buyers_of,
        degree_sum,
    }
}

/// Ground truth for one held-out show: every buyer and their total spend.
#[derive(Debug, Clone, PartialEq)]
pub struct TestShow {
    pub show_id: String,
    pub spend_by_user: BTreeMap<String, Money>,
}

/// Optional down-sampling of the held-out shows, seeded for
/// reproducibility.
#[derive(Debug, Clone, Copy)]
pub struct TestSample {
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train_transactions: Vec<Transaction>,
    pub train_index: InteractionIndex,
    /// Held-out shows with ground-truth spend, ascending by show id.
    pub test_shows: Vec<TestShow>,
}

/// Temporal holdout: a show is a test show iff its first transaction is
/// after `cutoff`. Train transactions exclude every purchase of a
/// post-cutoff show, including shows dropped by sampling.
pub fn split_holdout(
    transactions: &[Transaction],
    cutoff: i64,
    sample: Option<TestSample>,
) -> Result<HoldoutSplit> {
    let mut first_seen: BTreeMap<&str, i64> = BTreeMap::new();
    for t in transactions {
        first_seen
            .entry(&t.show_id)
            .and_modify(|f| *f = (*f).min(t.timestamp))
            .or_insert(t.timestamp);
    }

    let held_out: HashSet<&str> = first_seen
        .iter()
        .filter(|(_, &first)| first > cutoff)
        .map(|(&id, _)| id)
        .collect();
    if held_out.is_empty() {
        return Err(Error::Config(format!(
            "cutoff {cutoff} leaves an empty test set"
        )));
    }
    if held_out.len() == first_seen.len() {
        return Err(Error::Config(format!(
            "cutoff {cutoff} leaves an empty training set"
        )));
    }

    let mut test_ids: Vec<String> = {
        let mut ids: Vec<&str> = held_out.iter().copied().collect();
        ids.sort_unstable();
        ids.into_iter().map(String::from).collect()
    };
    if let Some(sample) = sample {
        if sample.size == 0 {
            return Err(Error::Config("test sample size must be at least 1".into()));
        }
        if sample.size < test_ids.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
            test_ids.shuffle(&mut rng);
            test_ids.truncate(sample.size);
            test_ids.sort_unstable();
        }
    }

    let train_transactions: Vec<Transaction> = transactions
        .iter()
        .filter(|t| !held_out.contains(t.show_id.as_str()))
        .cloned()
        .collect();

    let selected: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    let mut truth: BTreeMap<&str, BTreeMap<String, Money>> = BTreeMap::new();
    for t in transactions {
        if selected.contains(t.show_id.as_str()) {
            *truth
                .entry(&t.show_id)
                .or_default()
                .entry(t.user_id.clone())
                .or_insert(Money::ZERO) += t.amount;
        }
    }
    let test_shows = test_ids
        .iter()
        .map(|id| TestShow {
            show_id: id.clone(),
            spend_by_user: truth.remove(id.as_str()).unwrap_or_default(),
        })
        .collect();

    let train_index = build_index(&train_transactions);
    Ok(HoldoutSplit {
        train_transactions,
        train_index,
        test_shows,
    })
}

/// Writes the index cache: version line, id tables in dense order, then
/// one sorted adjacency line per user. Reloading reproduces the index
/// exactly, including dense id assignment.
pub fn write_index_cache<W: Write>(index: &InteractionIndex, mut sink: W) -> Result<()> {
    writeln!(sink, "#{INDEX_CACHE_VERSION}")?;
    writeln!(
        sink,
        "#counts users={} shows={}",
        index.user_count(),
        index.show_count()
    )?;
    for id in &index.user_ids {
        writeln!(sink, "U {id}")?;
    }
    for id in &index.show_ids {
        writeln!(sink, "S {id}")?;
    }
    for shows in &index.shows_of {
        let joined: Vec<String> = shows.iter().map(u32::to_string).collect();
        writeln!(sink, "P {}", joined.join(" "))?;
    }
    Ok(())
}

pub fn write_index_cache_file(index: &InteractionIndex, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_index_cache(index, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn read_index_cache<R: BufRead>(source: R) -> Result<InteractionIndex> {
    let bad = |msg: String| Error::Format(format!("index cache: {msg}"));
    let mut lines = source.lines();
    let version = lines.next().transpose()?.unwrap_or_default();
    if version != format!("#{INDEX_CACHE_VERSION}") {
        return Err(bad(format!("unsupported version line '{version}'")));
    }
    let counts = lines.next().transpose()?.unwrap_or_default();
    let rest = counts
        .strip_prefix("#counts users=")
        .ok_or_else(|| bad("missing counts line".into()))?;
    let (users, shows) = rest
        .split_once(" shows=")
        .ok_or_else(|| bad("missing show count".into()))?;
    let user_count: usize = users.parse().map_err(|_| bad("bad user count".into()))?;
    let show_count: usize = shows.parse().map_err(|_| bad("bad show count".into()))?;

    let mut user_ids = Vec::with_capacity(user_count);
    let mut show_ids = Vec::with_capacity(show_count);
    let mut shows_of: Vec<Vec<u32>> = Vec::with_capacity(user_count);
    for line in lines {
        let line = line?;
        if let Some(id) = line.strip_prefix("U ") {
            user_ids.push(id.to_string());
        } else if let Some(id) = line.strip_prefix("S ") {
            show_ids.push(id.to_string());
        } else if let Some(list) = line.strip_prefix("P ") {
            let mut shows = Vec::new();
            for token in list.split_whitespace() {
                let show: u32 = token
                    .parse()
                    .map_err(|_| bad(format!("bad pair '{token}'")))?;
                if show as usize >= show_count {
                    return Err(bad(format!("show index {show} out of range")));
                }
                shows.push(show);
            }
            shows_of.push(shows);
        } else if !line.is_empty() {
            return Err(bad(format!("unrecognized line '{line}'")));
        }
    }
    if user_ids.len() != user_count || show_ids.len() != show_count || shows_of.len() != user_count
    {
        return Err(bad("truncated cache".into()));
    }

    let mut buyers_of: Vec<Vec<u32>> = vec![Vec::new(); show_count];
    for (user, shows) in shows_of.iter().enumerate() {
        for &show in shows {
            buyers_of[show as usize].push(user as u32);
        }
    }
    let degree_sum = buyers_of.iter().map(|b| b.len() as u64).sum();
    let user_lookup = user_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i as u32))
        .collect();
    let show_lookup = show_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i as u32))
        .collect();
    Ok(InteractionIndex {
        user_ids,
        show_ids,
        user_lookup,
        show_lookup,
        shows_of,
        buyers_of,
        degree_sum,
    })
}

pub fn read_index_cache_file(path: &Path) -> Result<InteractionIndex> {
    let file = std::fs::File::open(path)?;
    read_index_cache(BufReader::new(file))
}
