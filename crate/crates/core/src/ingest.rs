//! Dataset loaders, timestamp randomization and a synthetic workflow
//! generator.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    Dataset, Event, EventSequence, GraphError, NodeCatalog, NodeId, NodeInfo, SchemaKind, Timestamp,
};

/// Default window for randomized timestamps: 72 hours.
pub const DEFAULT_RANDOM_WINDOW: Timestamp = 72 * 3600;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("instance `{instance}`: duplicate timestamp {t}")]
    DuplicateTimestamp { instance: String, t: Timestamp },
    #[error("instance `{instance}`: timestamps out of order at line {line}")]
    NonMonotonic { instance: String, line: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("window must be positive, got {0}")]
    InvalidWindow(Timestamp),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("transition table has no absorbing state")]
    NoAbsorbingState,
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_err(line, e.to_string())
}

/// Bumps each timestamp to at least one second past its predecessor.
/// Returns the number of adjusted events.
fn nudge(events: &mut [Event]) -> usize {
    let mut moved = 0;
    for i in 1..events.len() {
        if events[i].t <= events[i - 1].t {
            events[i].t = events[i - 1].t + 1;
            moved += 1;
        }
    }
    moved
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeGrouping {
    /// One instance for the whole file.
    #[default]
    Global,
    /// One instance per source node.
    PerSource,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EdgeListOptions {
    pub grouping: EdgeGrouping,
    /// Sort out-of-order edges by time instead of failing.
    pub sort: bool,
    /// Fail on equal timestamps instead of nudging them apart.
    pub strict: bool,
}

fn parse_timestamp(raw: &str) -> Option<Timestamp> {
    raw.parse::<Timestamp>().ok().or_else(|| {
        raw.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(|x| x.floor() as Timestamp)
    })
}

/// Reads whitespace-separated `src dst [weight] timestamp` lines. Lines
/// starting with `%` or `#` are comments. Each edge becomes an event at
/// its destination node.
pub fn load_edge_list(path: &Path, opts: EdgeListOptions) -> Result<Dataset, IngestError> {
    let reader = BufReader::new(open(path)?);
    let mut nodes = BTreeSet::new();
    let mut groups: Vec<(String, Vec<(Event, usize)>)> = Vec::new();
    let mut group_of: HashMap<u32, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(parse_err(lineno, format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        let id = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| parse_err(lineno, format!("invalid node id `{s}`")))
        };
        let src = id(fields[0])?;
        let dst = id(fields[1])?;
        if fields.len() == 4 && fields[2].parse::<f64>().is_err() {
            return Err(parse_err(lineno, format!("invalid weight `{}`", fields[2])));
        }
        let raw_t = fields[fields.len() - 1];
        let t = parse_timestamp(raw_t).ok_or_else(|| parse_err(lineno, format!("invalid timestamp `{raw_t}`")))?;
        nodes.insert(src);
        nodes.insert(dst);
        let g = match opts.grouping {
            EdgeGrouping::Global => {
                if groups.is_empty() {
                    groups.push(("global".into(), Vec::new()));
                }
                0
            }
            EdgeGrouping::PerSource => *group_of.entry(src).or_insert_with(|| {
                groups.push((src.to_string(), Vec::new()));
                groups.len() - 1
            }),
        };
        groups[g].1.push((Event::new(dst, t), lineno));
    }
    let catalog = NodeCatalog::from_ids(nodes.into_iter().map(NodeId))?;
    let mut instances = Vec::with_capacity(groups.len());
    for (name, mut rows) in groups {
        if opts.sort {
            rows.sort_by_key(|(e, _)| e.t);
        } else if let Some(w) = rows.windows(2).find(|w| w[1].0.t < w[0].0.t) {
            return Err(IngestError::NonMonotonic {
                instance: name,
                line: w[1].1,
            });
        }
        let mut events: Vec<Event> = rows.into_iter().map(|(e, _)| e).collect();
        finish_ties(&name, &mut events, opts.strict)?;
        instances.push(EventSequence::new(name, events));
    }
    Ok(Dataset::new(catalog, instances, SchemaKind::EdgeList)?)
}

fn finish_ties(instance: &str, events: &mut [Event], strict: bool) -> Result<(), IngestError> {
    if strict {
        if let Some(w) = events.windows(2).find(|w| w[1].t == w[0].t) {
            return Err(IngestError::DuplicateTimestamp {
                instance: instance.to_string(),
                t: w[0].t,
            });
        }
        return Ok(());
    }
    let moved = nudge(events);
    if moved > 0 {
        log::warn!("instance `{instance}`: nudged {moved} tied timestamp(s) by +1 s");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ActivityOptions {
    /// Fail on equal timestamps within an instance instead of nudging.
    pub strict: bool,
}

#[derive(Debug, Deserialize)]
struct ActivityRow {
    instance_id: String,
    activity_id: u32,
    timestamp: Timestamp,
}

/// Reads a CSV with header `instance_id,activity_id,timestamp`. Without a
/// catalog, one is built from the activity ids seen.
pub fn load_activity_csv(
    path: &Path,
    catalog: Option<&NodeCatalog>,
    opts: ActivityOptions,
) -> Result<Dataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = reader.headers().map_err(csv_err)?.clone();
    for required in ["instance_id", "activity_id", "timestamp"] {
        if !headers.iter().any(|h| h == required) {
            return Err(parse_err(1, format!("missing column `{required}`")));
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_instance: HashMap<String, Vec<Event>> = HashMap::new();
    for row in reader.deserialize::<ActivityRow>() {
        let row = row.map_err(csv_err)?;
        let events = by_instance.entry(row.instance_id.clone()).or_insert_with(|| {
            order.push(row.instance_id.clone());
            Vec::new()
        });
        events.push(Event::new(row.activity_id, row.timestamp));
    }
    let catalog = match catalog {
        Some(c) => c.clone(),
        None => {
            let ids: BTreeSet<u32> = by_instance.values().flatten().map(|e| e.node.0).collect();
            NodeCatalog::from_ids(ids.into_iter().map(NodeId))?
        }
    };
    let mut instances = Vec::with_capacity(order.len());
    for name in order {
        let mut events = by_instance.remove(&name).unwrap_or_default();
        events.sort_by_key(|e| e.t);
        finish_ties(&name, &mut events, opts.strict)?;
        instances.push(EventSequence::new(name, events));
    }
    Ok(Dataset::new(catalog, instances, SchemaKind::ActivityLog)?)
}

#[derive(Debug, Deserialize)]
struct CatalogRow {
    id: u32,
    label: String,
    revisitable: Option<bool>,
}

/// Reads a node catalog CSV with header `id,label[,revisitable]`.
pub fn load_catalog(path: &Path) -> Result<NodeCatalog, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut nodes = Vec::new();
    for row in reader.deserialize::<CatalogRow>() {
        let row = row.map_err(csv_err)?;
        nodes.push(NodeInfo::new(NodeId(row.id), row.label, row.revisitable.unwrap_or(true)));
    }
    Ok(NodeCatalog::new(nodes)?)
}

/// Redraws every event time uniformly in `[start, start + window]`, then
/// re-sorts and nudges ties apart.
pub fn randomize_timestamps(ds: &Dataset, window: Timestamp, seed: u64) -> Result<Dataset, IngestError> {
    if window <= 0 {
        return Err(IngestError::InvalidWindow(window));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(ds.len());
    for seq in &ds.instances {
        let start = seq.start().unwrap_or(0);
        let offsets = Uniform::new_inclusive(0, window);
        let mut events: Vec<Event> = seq
            .events
            .iter()
            .map(|e| Event {
                node: e.node,
                t: start + offsets.sample(&mut rng),
            })
            .collect();
        events.sort_by_key(|e| e.t);
        nudge(&mut events);
        instances.push(EventSequence::new(seq.instance_id.clone(), events));
    }
    Ok(Dataset::new(ds.catalog.clone(), instances, ds.schema_kind)?)
}

/// Inclusive range of seconds spent before a transition fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellTime {
    pub min: Timestamp,
    pub max: Timestamp,
}

impl Default for DwellTime {
    fn default() -> Self {
        Self { min: 1, max: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Target catalog index.
    pub to: usize,
    pub prob: f64,
    pub dwell: DwellTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub instance_count: usize,
    pub node_count: usize,
    /// Outgoing transitions per catalog index; an empty row is absorbing.
    pub transition_table: Vec<Vec<Transition>>,
    pub start: usize,
    pub missing_rate: f64,
    pub seed: u64,
    /// Walks are cut after this many events.
    pub max_len: usize,
    /// Cut each walk at a uniformly drawn length in `[2, full length]`,
    /// as if the instance were observed while still running.
    #[serde(default)]
    pub censor: bool,
    pub labels: Vec<String>,
}

const CRM_ADJACENCY: [&[usize]; 12] = [
    &[2, 3],
    &[3, 4, 7, 9],
    &[4, 7, 9],
    &[5],
    &[6],
    &[7, 11],
    &[8, 9, 10],
    &[9, 10, 12],
    &[8, 10, 12],
    &[4, 11],
    &[8, 9, 10, 12],
    &[],
];

const CRM_LABELS: [&str; 12] = [
    "Start",
    "Client initiated contact",
    "Actual contact",
    "Appointment set",
    "Appointment confirmed",
    "Appointment complete",
    "In-person visit",
    "Test drive",
    "Deal negotiation",
    "Turn-over",
    "Be-back",
    "Deal closed",
];

fn uniform_rows(adjacency: &[Vec<usize>], dwell: DwellTime) -> Vec<Vec<Transition>> {
    adjacency
        .iter()
        .map(|succ| {
            succ.iter()
                .map(|&to| Transition {
                    to,
                    prob: 1.0 / succ.len() as f64,
                    dwell,
                })
                .collect()
        })
        .collect()
}

impl SyntheticConfig {
    /// Twelve-activity sales workflow with uniform branching, ending at
    /// "Deal closed".
    pub fn crm(instance_count: usize, missing_rate: f64, seed: u64) -> Self {
        let adjacency: Vec<Vec<usize>> = CRM_ADJACENCY
            .iter()
            .map(|row| row.iter().map(|&id| id - 1).collect())
            .collect();
        Self {
            instance_count,
            node_count: 12,
            transition_table: uniform_rows(&adjacency, DwellTime::default()),
            start: 0,
            missing_rate,
            seed,
            max_len: 64,
            censor: false,
            labels: CRM_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Fixed successor chain `1 → 2 → … → node_count`.
    pub fn chain(instance_count: usize, node_count: usize, seed: u64) -> Self {
        let adjacency: Vec<Vec<usize>> = (0..node_count)
            .map(|i| if i + 1 < node_count { vec![i + 1] } else { vec![] })
            .collect();
        Self {
            instance_count,
            node_count,
            transition_table: uniform_rows(&adjacency, DwellTime::default()),
            start: 0,
            missing_rate: 0.0,
            seed,
            max_len: 64,
            censor: false,
            labels: (1..=node_count).map(|i| format!("step {i}")).collect(),
        }
    }

    pub fn censored(mut self) -> Self {
        self.censor = true;
        self
    }

    pub fn with_dwell(mut self, dwell: DwellTime) -> Self {
        for row in &mut self.transition_table {
            for tr in row {
                tr.dwell = dwell;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidConfig(m));
        if self.node_count == 0 || self.transition_table.len() != self.node_count {
            return bad(format!(
                "transition table has {} rows for {} nodes",
                self.transition_table.len(),
                self.node_count
            ));
        }
        if self.labels.len() != self.node_count {
            return bad(format!("{} labels for {} nodes", self.labels.len(), self.node_count));
        }
        if self.start >= self.node_count {
            return bad(format!("start node {} out of range", self.start));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate must lie in [0, 1), got {}", self.missing_rate));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        for (i, row) in self.transition_table.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let total: f64 = row.iter().map(|t| t.prob).sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|t| !(t.prob >= 0.0)) {
                return bad(format!("row {i} probabilities sum to {total}"));
            }
            for t in row {
                if t.to >= self.node_count {
                    return bad(format!("row {i} targets unknown node {}", t.to));
                }
                if t.dwell.min < 1 || t.dwell.max < t.dwell.min {
                    return bad(format!("row {i} has invalid dwell range"));
                }
            }
        }
        if self.transition_table.iter().all(|row| !row.is_empty()) {
            return Err(IngestError::NoAbsorbingState);
        }
        Ok(())
    }

    fn catalog(&self) -> Result<NodeCatalog, IngestError> {
        let nodes = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| NodeInfo::new(NodeId(i as u32 + 1), l.clone(), true))
            .collect();
        Ok(NodeCatalog::new(nodes)?)
    }
}

/// Samples workflow walks from the start node to an absorbing node, then
/// drops visited activities with one dataset-wide probability chosen so
/// that, in expectation, `missing_rate` of the (start node, other node)
/// pairs are absent. Start and absorbing nodes are never dropped.
pub fn synthesize(cfg: &SyntheticConfig) -> Result<Dataset, IngestError> {
    cfg.validate()?;
    let catalog = cfg.catalog()?;
    let n = cfg.node_count;
    let samplers: Vec<Option<WeightedIndex<f64>>> = cfg
        .transition_table
        .iter()
        .map(|row| {
            if row.is_empty() {
                Ok(None)
            } else {
                WeightedIndex::new(row.iter().map(|t| t.prob))
                    .map(Some)
                    .map_err(|e| IngestError::InvalidConfig(e.to_string()))
            }
        })
        .collect::<Result<_, _>>()?;
    let droppable = |v: usize| v != cfg.start && !cfg.transition_table[v].is_empty();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut walks = Vec::with_capacity(cfg.instance_count);
    let mut unvisited = 0usize;
    let mut candidates = 0usize;
    for _ in 0..cfg.instance_count {
        let mut walk = vec![(cfg.start, 0 as Timestamp)];
        let mut cur = cfg.start;
        let mut t = 0;
        while walk.len() < cfg.max_len {
            let Some(sampler) = &samplers[cur] else { break };
            let tr = cfg.transition_table[cur][sampler.sample(&mut rng)];
            t += rng.gen_range(tr.dwell.min..=tr.dwell.max);
            cur = tr.to;
            walk.push((cur, t));
        }
        if cfg.censor && walk.len() > 2 {
            let keep = rng.gen_range(2..=walk.len());
            walk.truncate(keep);
        }
        let mut distinct: Vec<usize> = walk.iter().map(|&(v, _)| v).collect();
        distinct.sort_unstable();
        distinct.dedup();
        unvisited += n - distinct.len();
        candidates += distinct.iter().filter(|&&v| droppable(v)).count();
        walks.push((walk, distinct));
    }
    let target = cfg.missing_rate * ((n - 1) * cfg.instance_count) as f64;
    let p_drop = if candidates == 0 {
        0.0
    } else {
        ((target - unvisited as f64) / candidates as f64).clamp(0.0, 1.0)
    };
    if p_drop == 0.0 && unvisited as f64 > target {
        log::warn!("walks already leave more pairs absent than missing_rate asks for");
    }
    let mut instances = Vec::with_capacity(cfg.instance_count);
    for (inst, (walk, distinct)) in walks.into_iter().enumerate() {
        let dropped: Vec<usize> = distinct
            .into_iter()
            .filter(|&v| droppable(v))
            .filter(|_| rng.gen::<f64>() < p_drop)
            .collect();
        let events = walk
            .into_iter()
            .filter(|(v, _)| !dropped.contains(v))
            .map(|(v, t)| Event::new(v as u32 + 1, t))
            .collect();
        instances.push(EventSequence::new(format!("s{inst}"), events));
    }
    Ok(Dataset::new(catalog, instances, SchemaKind::Synthetic)?)
}

/// Permutes node labels within each instance while keeping the timestamps,
/// destroying any successor structure.
pub fn shuffle_successors(ds: &Dataset, seed: u64) -> Result<Dataset, IngestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = ds
        .instances
        .iter()
        .map(|seq| {
            let mut nodes: Vec<NodeId> = seq.nodes().collect();
            nodes.shuffle(&mut rng);
            let events = seq
                .events
                .iter()
                .zip(nodes)
                .map(|(e, node)| Event { node, t: e.t })
                .collect();
            EventSequence::new(seq.instance_id.clone(), events)
        })
        .collect();
    Ok(Dataset::new(ds.catalog.clone(), instances, ds.schema_kind)?)
}
