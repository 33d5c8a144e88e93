//! Time-parameterized predictive influence and the relative decay it drives.
//!
//! The influence of the node at event position `i` is the product of pair
//! probabilities `σ(⟨f_i, f_j⟩ · a(v_i, v_j))` over the event window
//! `[i - α, i + α]`, scaled by `1 - β`. The per-instance mean influence θ
//! sets the decay `D = exp(-(1 - θ))`.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EventSequence, NodeCatalog, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TppiError {
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("event index {index} out of range for sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("beta must lie in [0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("window radius alpha must be at least 1")]
    InvalidAlpha,
    #[error("influence vector is empty")]
    EmptyInfluence,
    #[error("node {0} is not in the catalog")]
    UnknownNode(NodeId),
    #[error("temporal matrix is {matrix}x{matrix} but the feature map has {features} rows")]
    ShapeMismatch { matrix: usize, features: usize },
}

/// Latent feature vector per catalog index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rows: Array2<f64>,
}

impl FeatureMap {
    pub fn new(rows: Array2<f64>) -> Result<Self, TppiError> {
        if rows.ncols() == 0 {
            return Err(TppiError::DimensionMismatch(0, 1));
        }
        Ok(Self { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, f64> {
        self.rows.row(index)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without cancellation for large `|x|`.
pub fn ln_sigmoid(x: f64) -> f64 {
    // ln σ(x) = -softplus(-x)
    let z = -x;
    -(z.max(0.0) + (-z.abs()).exp().ln_1p())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_view(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b)
}

/// `σ(⟨f_i, f_j⟩ · a_ij)`.
pub fn pair_probability(f_i: &[f64], f_j: &[f64], a_ij: f64) -> Result<f64, TppiError> {
    if f_i.len() != f_j.len() {
        return Err(TppiError::DimensionMismatch(f_i.len(), f_j.len()));
    }
    Ok(sigmoid(dot(f_i, f_j) * a_ij))
}

/// Log-space window product over events with catalog indices `idx`.
pub(crate) fn ln_influence_indexed(
    idx: &[usize],
    i: usize,
    features: &FeatureMap,
    weights: &Array2<f64>,
    alpha: usize,
) -> f64 {
    let lo = i.saturating_sub(alpha);
    let hi = (i + alpha).min(idx.len() - 1);
    let vi = idx[i];
    let fi = features.row(vi);
    (lo..=hi)
        .filter(|&j| j != i)
        .map(|j| {
            let vj = idx[j];
            ln_sigmoid(dot_view(fi, features.row(vj)) * weights[[vi, vj]])
        })
        .sum()
}

fn resolve(seq: &EventSequence, catalog: &NodeCatalog) -> Result<Vec<usize>, TppiError> {
    seq.events
        .iter()
        .map(|e| catalog.index_of(e.node).ok_or(TppiError::UnknownNode(e.node)))
        .collect()
}

fn check_shapes(features: &FeatureMap, weights: &Array2<f64>) -> Result<(), TppiError> {
    if weights.nrows() != features.len() || weights.ncols() != features.len() {
        return Err(TppiError::ShapeMismatch {
            matrix: weights.nrows(),
            features: features.len(),
        });
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<(), TppiError> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(TppiError::InvalidBeta(beta))
    }
}

/// Window product of pair probabilities around event `i`, in `(0, 1]`.
pub fn influence_max(
    seq: &EventSequence,
    catalog: &NodeCatalog,
    i: usize,
    features: &FeatureMap,
    weights: &Array2<f64>,
    alpha: usize,
) -> Result<f64, TppiError> {
    if alpha == 0 {
        return Err(TppiError::InvalidAlpha);
    }
    if i >= seq.len() {
        return Err(TppiError::IndexOutOfRange {
            index: i,
            len: seq.len(),
        });
    }
    check_shapes(features, weights)?;
    let idx = resolve(seq, catalog)?;
    Ok(ln_influence_indexed(&idx, i, features, weights, alpha).exp())
}

pub fn tppi(
    seq: &EventSequence,
    catalog: &NodeCatalog,
    i: usize,
    features: &FeatureMap,
    weights: &Array2<f64>,
    alpha: usize,
    beta: f64,
) -> Result<f64, TppiError> {
    check_beta(beta)?;
    Ok(influence_max(seq, catalog, i, features, weights, alpha)? * (1.0 - beta))
}

/// Influence per node of one instance, evaluated at each node's latest
/// occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TppiVector {
    pub scores: Vec<(NodeId, f64)>,
    pub beta: f64,
    pub alpha: usize,
}

impl TppiVector {
    pub fn new(scores: Vec<(NodeId, f64)>, beta: f64, alpha: usize) -> Result<Self, TppiError> {
        check_beta(beta)?;
        Ok(Self {
            scores,
            beta,
            alpha,
        })
    }

    pub fn get(&self, node: NodeId) -> Option<f64> {
        self.scores.iter().find(|(v, _)| *v == node).map(|&(_, p)| p)
    }

    pub fn mean(&self) -> Option<f64> {
        if self.scores.is_empty() {
            None
        } else {
            Some(self.scores.iter().map(|&(_, p)| p).sum::<f64>() / self.scores.len() as f64)
        }
    }
}

pub(crate) fn tppi_scores_indexed(
    idx: &[usize],
    features: &FeatureMap,
    weights: &Array2<f64>,
    alpha: usize,
    beta: f64,
) -> Vec<(usize, f64)> {
    let mut latest: Vec<(usize, usize)> = Vec::new();
    for (pos, &v) in idx.iter().enumerate() {
        match latest.iter_mut().find(|(node, _)| *node == v) {
            Some(entry) => entry.1 = pos,
            None => latest.push((v, pos)),
        }
    }
    latest
        .into_iter()
        .map(|(v, pos)| {
            let p = ln_influence_indexed(idx, pos, features, weights, alpha).exp() * (1.0 - beta);
            (v, p)
        })
        .collect()
}

pub fn tppi_vector(
    seq: &EventSequence,
    catalog: &NodeCatalog,
    features: &FeatureMap,
    weights: &Array2<f64>,
    alpha: usize,
    beta: f64,
) -> Result<TppiVector, TppiError> {
    check_beta(beta)?;
    if alpha == 0 {
        return Err(TppiError::InvalidAlpha);
    }
    check_shapes(features, weights)?;
    let idx = resolve(seq, catalog)?;
    if idx.is_empty() {
        return Err(TppiError::EmptyInfluence);
    }
    let scores = tppi_scores_indexed(&idx, features, weights, alpha, beta)
        .into_iter()
        .map(|(v, p)| (catalog.node(v).id, p))
        .collect();
    TppiVector::new(scores, beta, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayValue {
    pub d: f64,
    pub theta: f64,
}

/// `D = exp(-(1 - θ))`.
pub fn decay_from_theta(theta: f64) -> DecayValue {
    DecayValue {
        d: (-(1.0 - theta)).exp(),
        theta,
    }
}

pub fn decay(p: &TppiVector) -> Result<DecayValue, TppiError> {
    p.mean().map(decay_from_theta).ok_or(TppiError::EmptyInfluence)
}

/// Time-only decay `exp(-θ (T - t))`, kept for comparison.
pub fn classic_decay(theta: f64, elapsed: f64) -> f64 {
    (-theta * elapsed).exp()
}
