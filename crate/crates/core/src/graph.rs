//! Domain types for temporally consistent networks.
//!
//! A [`Dataset`] is a node catalog plus a list of network instances. Each
//! instance is an [`EventSequence`]: the nodes it visits in strictly
//! increasing time order, together with its running time Δ.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Timestamp in integer seconds.
pub type Timestamp = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("instance `{instance}`: empty event sequence")]
    EmptySequence { instance: String },
    #[error("instance `{instance}`: timestamps not strictly increasing at event index {index}")]
    NonMonotonicTimestamps { instance: String, index: usize },
    #[error("instance `{instance}`: unknown node {node}")]
    UnknownNode { instance: String, node: NodeId },
    #[error("instance `{instance}`: running time {horizon} precedes last event at {last}")]
    HorizonBeforeLastEvent {
        instance: String,
        horizon: Timestamp,
        last: Timestamp,
    },
    #[error("duplicate node id {0} in catalog")]
    DuplicateNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub label: String,
    /// Whether the node may be predicted again after it was visited.
    #[serde(default = "default_revisitable")]
    pub revisitable: bool,
}

fn default_revisitable() -> bool {
    true
}

impl NodeInfo {
    pub fn new(id: NodeId, label: impl Into<String>, revisitable: bool) -> Self {
        Self {
            id,
            label: label.into(),
            revisitable,
        }
    }
}

/// Ordered set of nodes. Matrix rows and columns follow catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NodeInfo>", into = "Vec<NodeInfo>")]
pub struct NodeCatalog {
    nodes: Vec<NodeInfo>,
    index: HashMap<NodeId, usize>,
}

impl NodeCatalog {
    pub fn new(nodes: Vec<NodeInfo>) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id, i).is_some() {
                return Err(GraphError::DuplicateNode(node.id));
            }
        }
        Ok(Self { nodes, index })
    }

    /// Catalog of `ids` with the id as label, all revisitable.
    pub fn from_ids(ids: impl IntoIterator<Item = NodeId>) -> Result<Self, GraphError> {
        Self::new(
            ids.into_iter()
                .map(|id| NodeInfo {
                    id,
                    label: id.to_string(),
                    revisitable: true,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn node(&self, index: usize) -> &NodeInfo {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }
}

impl TryFrom<Vec<NodeInfo>> for NodeCatalog {
    type Error = GraphError;

    fn try_from(nodes: Vec<NodeInfo>) -> Result<Self, Self::Error> {
        Self::new(nodes)
    }
}

impl From<NodeCatalog> for Vec<NodeInfo> {
    fn from(catalog: NodeCatalog) -> Self {
        catalog.nodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub node: NodeId,
    pub t: Timestamp,
}

impl Event {
    pub fn new(node: u32, t: Timestamp) -> Self {
        Self {
            node: NodeId(node),
            t,
        }
    }
}

/// One network instance, e.g. one sale's activity trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSequence {
    pub instance_id: String,
    pub events: Vec<Event>,
    /// Running time Δ.
    pub horizon: Timestamp,
}

impl EventSequence {
    /// Sequence whose running time is its last event's timestamp.
    pub fn new(instance_id: impl Into<String>, events: Vec<Event>) -> Self {
        let horizon = events.last().map_or(0, |e| e.t);
        Self {
            instance_id: instance_id.into(),
            events,
            horizon,
        }
    }

    pub fn with_horizon(mut self, horizon: Timestamp) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start(&self) -> Option<Timestamp> {
        self.events.first().map(|e| e.t)
    }

    pub fn last(&self) -> Option<&Event> {
        self.events.last()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.events.iter().map(|e| e.node)
    }

    /// The first `len` events, with Δ reset to the last retained timestamp.
    pub fn prefix(&self, len: usize) -> EventSequence {
        EventSequence::new(self.instance_id.clone(), self.events[..len].to_vec())
    }

    /// The same events with every timestamp and Δ shifted by `offset`.
    pub fn shifted(&self, offset: Timestamp) -> EventSequence {
        EventSequence {
            instance_id: self.instance_id.clone(),
            events: self
                .events
                .iter()
                .map(|e| Event {
                    node: e.node,
                    t: e.t + offset,
                })
                .collect(),
            horizon: self.horizon + offset,
        }
    }
}

/// Checks the temporal-consistency invariants of one instance.
pub fn validate_sequence(
    seq: EventSequence,
    catalog: &NodeCatalog,
) -> Result<EventSequence, GraphError> {
    let instance = || seq.instance_id.clone();
    let last = match seq.events.last() {
        Some(e) => e.t,
        None => return Err(GraphError::EmptySequence { instance: instance() }),
    };
    for (index, pair) in seq.events.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(GraphError::NonMonotonicTimestamps {
                instance: instance(),
                index: index + 1,
            });
        }
    }
    if let Some(e) = seq.events.iter().find(|e| !catalog.contains(e.node)) {
        return Err(GraphError::UnknownNode {
            instance: instance(),
            node: e.node,
        });
    }
    if seq.horizon < last {
        return Err(GraphError::HorizonBeforeLastEvent {
            instance: instance(),
            horizon: seq.horizon,
            last,
        });
    }
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaKind {
    EdgeList,
    ActivityLog,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub catalog: NodeCatalog,
    pub instances: Vec<EventSequence>,
    pub schema_kind: SchemaKind,
}

impl Dataset {
    /// Builds a dataset, validating every instance against the catalog.
    pub fn new(
        catalog: NodeCatalog,
        instances: Vec<EventSequence>,
        schema_kind: SchemaKind,
    ) -> Result<Self, GraphError> {
        let instances = instances
            .into_iter()
            .map(|seq| validate_sequence(seq, &catalog))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            catalog,
            instances,
            schema_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn with_instances(&self, instances: Vec<EventSequence>) -> Dataset {
        Dataset {
            catalog: self.catalog.clone(),
            instances,
            schema_kind: self.schema_kind,
        }
    }
}

/// Absent:observed counts, kept unreduced so aggregates stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRatio {
    pub absent: u64,
    pub observed: u64,
}

impl EdgeRatio {
    pub fn value(&self) -> f64 {
        if self.observed == 0 {
            if self.absent == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.absent as f64 / self.observed as f64
        }
    }

    /// Fraction of pairs that are absent.
    pub fn absent_fraction(&self) -> f64 {
        let total = self.absent + self.observed;
        if total == 0 {
            0.0
        } else {
            self.absent as f64 / total as f64
        }
    }

    pub fn reduced(&self) -> EdgeRatio {
        let g = gcd(self.absent, self.observed).max(1);
        EdgeRatio {
            absent: self.absent / g,
            observed: self.observed / g,
        }
    }
}

impl fmt::Display for EdgeRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.reduced();
        write!(f, "{}:{}", r.absent, r.observed)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub total_nodes: usize,
    pub average_degree: f64,
    pub absent_observed: EdgeRatio,
}

/// Dataset-level statistics.
///
/// * `total_nodes` is the number of distinct nodes in the catalog.
/// * `average_degree` is `2·|distinct undirected consecutive transitions| /
///   |distinct nodes|` per instance, averaged over instances.
/// * `absent_observed` counts, per instance, the pairs (initial node, j) over
///   every other catalog node j: observed when j occurs after the initial
///   event, absent otherwise.
pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let mut degree_sum = 0.0;
    let mut absent = 0u64;
    let mut observed = 0u64;
    let n = ds.catalog.len() as u64;

    for seq in &ds.instances {
        let Some(first) = seq.events.first() else {
            continue;
        };
        let distinct: BTreeSet<NodeId> = seq.nodes().collect();
        let mut edges = BTreeSet::new();
        for pair in seq.events.windows(2) {
            let (a, b) = (pair[0].node, pair[1].node);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        degree_sum += 2.0 * edges.len() as f64 / distinct.len() as f64;

        let reached: BTreeSet<NodeId> = seq.events[1..]
            .iter()
            .map(|e| e.node)
            .filter(|&v| v != first.node)
            .collect();
        let seen = reached.len() as u64;
        observed += seen;
        absent += n.saturating_sub(1).saturating_sub(seen);
    }

    let average_degree = if ds.instances.is_empty() {
        0.0
    } else {
        degree_sum / ds.instances.len() as f64
    };
    DatasetStats {
        instances: ds.instances.len(),
        total_nodes: ds.catalog.len(),
        average_degree,
        absent_observed: EdgeRatio { absent, observed },
    }
}
