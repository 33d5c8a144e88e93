//! Time-parameterized matrices and the binary adjacency baseline.
//!
//! For an instance with running time Δ, every catalog node `i` gets a
//! reference timestamp `t_i` (earliest occurrence under
//! [`WeightScheme::TpInitial`], latest under [`WeightScheme::TpRecent`],
//! instance start if the node never occurs). The raw matrix holds
//!
//! ```text
//! a(i,j) = |t_i - t_j|   if (i,j) is an observed transition
//! a(i,j) = |t_i - Δ|     otherwise
//! a(i,i) = 0
//! ```
//!
//! and the normalized matrix is `1 / (1 + |a(i,i) - a(i,j)|)`, which lies in
//! `(0, 1]` with a unit diagonal.
//!
//! Observed transitions are consecutive event pairs; under `TpInitial` the
//! initial event is also linked to every later event.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EventSequence, NodeCatalog, NodeId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Adjacency,
    TpInitial,
    TpRecent,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 3] = [
        WeightScheme::Adjacency,
        WeightScheme::TpInitial,
        WeightScheme::TpRecent,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Adjacency => "adjacency",
            WeightScheme::TpInitial => "tp-initial",
            WeightScheme::TpRecent => "tp-recent",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "adjacency" | "adj" => Ok(WeightScheme::Adjacency),
            "tp-initial" | "initial" => Ok(WeightScheme::TpInitial),
            "tp-recent" | "recent" => Ok(WeightScheme::TpRecent),
            other => Err(format!(
                "unknown scheme `{other}` (expected adjacency, tp-initial or tp-recent)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpError {
    #[error("scheme {0} does not produce a temporal matrix")]
    SchemeMismatch(WeightScheme),
    #[error("instance `{instance}`: node {node} is not in the catalog")]
    UnknownNode { instance: String, node: NodeId },
    #[error("instance `{0}` has no events")]
    EmptySequence(String),
}

/// Unnormalized temporal residuals in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTemporalMatrix {
    entries: Array2<f64>,
}

impl RawTemporalMatrix {
    pub fn from_entries(entries: Array2<f64>) -> Self {
        assert!(entries.is_square(), "raw temporal matrix must be square");
        assert!(
            entries.iter().all(|&a| a >= 0.0),
            "raw temporal entries must be non-negative"
        );
        Self { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Normalized temporal weights, every entry in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpMatrix {
    entries: Array2<f64>,
}

impl TpMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }
}

/// Binary adjacency of observed consecutive transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    entries: Array2<f64>,
}

impl AdjacencyMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }
}

fn indices(seq: &EventSequence, catalog: &NodeCatalog) -> Result<Vec<usize>, TpError> {
    seq.events
        .iter()
        .map(|e| {
            catalog.index_of(e.node).ok_or_else(|| TpError::UnknownNode {
                instance: seq.instance_id.clone(),
                node: e.node,
            })
        })
        .collect()
}

/// Observed transitions (row, column) in catalog indices.
fn observed_pairs(idx: &[usize], scheme: WeightScheme) -> BTreeSet<(usize, usize)> {
    let mut pairs: BTreeSet<(usize, usize)> = idx.windows(2).map(|w| (w[0], w[1])).collect();
    if scheme == WeightScheme::TpInitial {
        if let Some((&first, rest)) = idx.split_first() {
            pairs.extend(rest.iter().map(|&j| (first, j)));
        }
    }
    pairs
}

/// Reference timestamp per catalog index.
fn reference_times(
    seq: &EventSequence,
    idx: &[usize],
    n: usize,
    scheme: WeightScheme,
) -> Vec<Timestamp> {
    let start = seq.events[0].t;
    let mut refs: Vec<Option<Timestamp>> = vec![None; n];
    for (event, &i) in seq.events.iter().zip(idx) {
        match scheme {
            WeightScheme::TpRecent => refs[i] = Some(event.t),
            _ => {
                refs[i].get_or_insert(event.t);
            }
        }
    }
    refs.into_iter().map(|r| r.unwrap_or(start)).collect()
}

pub fn raw_temporal_matrix(
    seq: &EventSequence,
    catalog: &NodeCatalog,
    scheme: WeightScheme,
) -> Result<RawTemporalMatrix, TpError> {
    if scheme == WeightScheme::Adjacency {
        return Err(TpError::SchemeMismatch(scheme));
    }
    if seq.is_empty() {
        return Err(TpError::EmptySequence(seq.instance_id.clone()));
    }
    let n = catalog.len();
    let idx = indices(seq, catalog)?;
    let refs = reference_times(seq, &idx, n, scheme);
    let horizon = seq.horizon;

    // Integer arithmetic keeps the matrix exactly shift-invariant.
    let mut entries = Array2::from_shape_fn((n, n), |(i, _)| (refs[i] - horizon).abs() as f64);
    for (i, j) in observed_pairs(&idx, scheme) {
        entries[[i, j]] = (refs[i] - refs[j]).abs() as f64;
    }
    for i in 0..n {
        entries[[i, i]] = 0.0;
    }
    Ok(RawTemporalMatrix { entries })
}

pub fn normalize_tp(raw: &RawTemporalMatrix) -> TpMatrix {
    let n = raw.n();
    let entries = Array2::from_shape_fn((n, n), |(i, j)| {
        1.0 / (1.0 + (raw.get(i, i) - raw.get(i, j)).abs())
    });
    TpMatrix { entries }
}

pub fn tp_matrix(
    seq: &EventSequence,
    catalog: &NodeCatalog,
    scheme: WeightScheme,
) -> Result<TpMatrix, TpError> {
    raw_temporal_matrix(seq, catalog, scheme).map(|raw| normalize_tp(&raw))
}

pub fn adjacency_matrix(
    seq: &EventSequence,
    catalog: &NodeCatalog,
) -> Result<AdjacencyMatrix, TpError> {
    let n = catalog.len();
    let idx = indices(seq, catalog)?;
    let mut entries = Array2::zeros((n, n));
    for w in idx.windows(2) {
        entries[[w[0], w[1]]] = 1.0;
    }
    Ok(AdjacencyMatrix { entries })
}

/// Training target for `scheme`: the TP matrix, or the adjacency baseline.
pub fn target_matrix(
    seq: &EventSequence,
    catalog: &NodeCatalog,
    scheme: WeightScheme,
) -> Result<Array2<f64>, TpError> {
    match scheme {
        WeightScheme::Adjacency => adjacency_matrix(seq, catalog).map(AdjacencyMatrix::into_entries),
        _ => tp_matrix(seq, catalog, scheme).map(TpMatrix::into_entries),
    }
}
