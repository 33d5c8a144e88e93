//! Error metrics, the leave-last-out AUC protocol, scheme ablation,
//! column correlation analysis and runtime benchmarking.

use std::time::Instant;

use kodama::{linkage, Method};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Dataset, NodeId};
use crate::ingest::{synthesize, IngestError, SyntheticConfig};
use crate::tp_matrix::{adjacency_matrix, target_matrix, TpError, WeightScheme};
use crate::trainer::{predict_next, train, EpochRecord, Hyperparams, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} instances, got {got}")]
    TooFewInstances { needed: usize, got: usize },
    #[error("no instance has at least two events")]
    NoUsableInstances,
    #[error("invalid bench sizes: {0}")]
    InvalidSizes(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tp(#[from] TpError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<(), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let abs: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(abs / pred.len() as f64)
}

/// Probability that a positive outranks a negative, ties counting half.
/// `None` when either side is empty.
pub fn mann_whitney_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // average of 1-based ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let p = positives.len() as f64;
    let n = negatives.len() as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub auc: Option<f64>,
    pub per_epoch: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// Mean per-query AUC.
    pub auc: f64,
    pub queries: usize,
    pub instances: usize,
    pub skipped: usize,
    pub terminal_hits: usize,
    pub terminal_misses: usize,
    pub metrics: MetricReport,
    pub converged: bool,
}

struct InstanceAuc {
    query_aucs: Vec<f64>,
    terminal_hit: bool,
}

/// Holds out each instance's final event, trains on the rest, then ranks
/// candidates at every stage `1..T`. Each stage scores the true next node
/// against all other candidates; an instance's terminal stage counts as a
/// hit when the held-out node ranks first.
pub fn auc_protocol(ds: &Dataset, hp: &Hyperparams, scheme: WeightScheme) -> Result<AucReport, EvalError> {
    let usable: Vec<_> = ds.instances.iter().filter(|s| s.len() >= 2).cloned().collect();
    let skipped = ds.len() - usable.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} instance(s) with fewer than two events");
    }
    if usable.is_empty() {
        return Err(EvalError::NoUsableInstances);
    }
    let truncated = ds.with_instances(usable.iter().map(|s| s.prefix(s.len() - 1)).collect());
    let outcome = train(&truncated, hp, scheme)?;
    let model = &outcome.model;
    let per_instance: Vec<InstanceAuc> = usable
        .par_iter()
        .map(|seq| {
            let mut query_aucs = Vec::new();
            let mut terminal_hit = false;
            for stage in 1..seq.len() {
                let prefix = seq.prefix(stage);
                let at = prefix.last().expect("non-empty").t;
                let ranked = predict_next(model, &prefix, at)?;
                let truth = seq.events[stage].node;
                let positive = ranked.iter().find(|(v, _)| *v == truth).map(|&(_, s)| s);
                let negatives: Vec<f64> = ranked.iter().filter(|(v, _)| *v != truth).map(|&(_, s)| s).collect();
                let q = match positive {
                    Some(s) => mann_whitney_auc(&[s], &negatives),
                    // the true node was excluded from the candidates
                    None => (!negatives.is_empty()).then_some(0.0),
                };
                query_aucs.extend(q);
                if stage == seq.len() - 1 {
                    terminal_hit = ranked.first().map(|r| r.0) == Some(truth);
                }
            }
            Ok(InstanceAuc {
                query_aucs,
                terminal_hit,
            })
        })
        .collect::<Result<_, TrainError>>()?;
    let all: Vec<f64> = per_instance.iter().flat_map(|r| r.query_aucs.iter().copied()).collect();
    if all.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = per_instance.iter().filter(|r| r.terminal_hit).count();
    let auc = all.iter().sum::<f64>() / all.len() as f64;
    let last = outcome.log.last().expect("at least one epoch");
    Ok(AucReport {
        auc,
        queries: all.len(),
        instances: usable.len(),
        skipped,
        terminal_hits: hits,
        terminal_misses: usable.len() - hits,
        metrics: MetricReport {
            rmse: last.rmse,
            mae: last.mae,
            auc: Some(auc),
            per_epoch: outcome.log.clone(),
        },
        converged: outcome.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFinal {
    pub scheme: WeightScheme,
    pub rmse: f64,
    pub mae: f64,
    pub epochs: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// One RMSE series per scheme, in [`WeightScheme::ALL`] order.
    pub curves: Vec<Vec<f64>>,
    pub finals: Vec<AblationFinal>,
}

impl AblationReport {
    pub fn final_for(&self, scheme: WeightScheme) -> Option<&AblationFinal> {
        self.finals.iter().find(|f| f.scheme == scheme)
    }

    /// Epoch rows with one optional RMSE per scheme; a curve that stopped
    /// early has no value in later rows.
    pub fn rows(&self) -> Vec<(usize, Vec<Option<f64>>)> {
        let len = self.curves.iter().map(Vec::len).max().unwrap_or(0);
        (0..len)
            .map(|e| (e, self.curves.iter().map(|c| c.get(e).copied()).collect()))
            .collect()
    }
}

/// Trains one model per weight scheme with identical hyperparameters.
pub fn ablation_curves(ds: &Dataset, hp: &Hyperparams) -> Result<AblationReport, EvalError> {
    let mut curves = Vec::new();
    let mut finals = Vec::new();
    for scheme in WeightScheme::ALL {
        let out = train(ds, hp, scheme)?;
        let last = out.log.last().expect("at least one epoch");
        finals.push(AblationFinal {
            scheme,
            rmse: last.rmse,
            mae: last.mae,
            epochs: out.log.len(),
            converged: out.converged,
        });
        curves.push(out.log.iter().map(|r| r.rmse).collect());
    }
    Ok(AblationReport { curves, finals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub scheme: WeightScheme,
    pub nodes: Vec<NodeId>,
    /// Pearson coefficients; `None` where a column has zero variance.
    pub coefficients: Vec<Vec<Option<f64>>>,
    pub cluster_order: Vec<NodeId>,
    pub undefined_pairs: Vec<(NodeId, NodeId)>,
    pub linkage: String,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Instances × nodes feature rows: node presence for the adjacency scheme,
/// otherwise the mean incoming temporal weight from the other nodes.
pub fn feature_rows(ds: &Dataset, scheme: WeightScheme) -> Result<Array2<f64>, EvalError> {
    let n = ds.catalog.len();
    let mut rows = Array2::zeros((ds.len(), n));
    for (r, seq) in ds.instances.iter().enumerate() {
        match scheme {
            WeightScheme::Adjacency => {
                // validated data: every node is in the catalog
                adjacency_matrix(seq, &ds.catalog)?;
                for v in seq.nodes() {
                    let j = ds.catalog.index_of(v).expect("validated");
                    rows[[r, j]] = 1.0;
                }
            }
            _ => {
                let a = target_matrix(seq, &ds.catalog, scheme)?;
                for j in 0..n {
                    let sum: f64 = (0..n).filter(|&i| i != j).map(|i| a[[i, j]]).sum();
                    rows[[r, j]] = if n > 1 { sum / (n - 1) as f64 } else { a[[0, 0]] };
                }
            }
        }
    }
    Ok(rows)
}

fn leaf_order(steps: &[kodama::Step<f64>], n: usize) -> Vec<usize> {
    if n <= 1 {
        return (0..n).collect();
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![n + steps.len() - 1];
    while let Some(c) = stack.pop() {
        if c < n {
            order.push(c);
        } else {
            let s = &steps[c - n];
            stack.push(s.cluster2);
            stack.push(s.cluster1);
        }
    }
    order
}

/// Pairwise Pearson correlation between node columns plus an average
/// linkage ordering on `1 - |r|` (undefined pairs at distance 1).
pub fn correlation_analysis(ds: &Dataset, scheme: WeightScheme) -> Result<CorrelationReport, EvalError> {
    if ds.len() < 2 {
        return Err(EvalError::TooFewInstances {
            needed: 2,
            got: ds.len(),
        });
    }
    let rows = feature_rows(ds, scheme)?;
    let n = rows.ncols();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| rows.column(j).to_vec()).collect();
    let mut coefficients = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = pearson(&cols[i], &cols[j]).map(|r| if i == j { 1.0 } else { r });
            coefficients[i][j] = r;
            coefficients[j][i] = r;
        }
    }
    let nodes: Vec<NodeId> = ds.catalog.ids().collect();
    let mut undefined_pairs = Vec::new();
    let mut condensed = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            match coefficients[i][j] {
                Some(r) => condensed.push(1.0 - r.abs()),
                None => {
                    undefined_pairs.push((nodes[i], nodes[j]));
                    condensed.push(1.0);
                }
            }
        }
    }
    let order = if n > 1 {
        let dendrogram = linkage(&mut condensed, n, Method::Average);
        leaf_order(dendrogram.steps(), n)
    } else {
        (0..n).collect()
    };
    Ok(CorrelationReport {
        scheme,
        cluster_order: order.into_iter().map(|i| nodes[i]).collect(),
        nodes,
        coefficients,
        undefined_pairs,
        linkage: "average linkage on 1-|r|".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub seconds: f64,
    pub per_instance: f64,
    pub epochs: usize,
}

/// Trains on synthetic sales-workflow datasets of each size and records the
/// wall time. Runs on `threads` worker threads.
pub fn runtime_bench(
    sizes: &[usize],
    hp: &Hyperparams,
    scheme: WeightScheme,
    threads: usize,
) -> Result<Vec<BenchRow>, EvalError> {
    if sizes.is_empty() {
        return Err(EvalError::InvalidSizes("no sizes given".into()));
    }
    if sizes.contains(&0) {
        return Err(EvalError::InvalidSizes("size 0".into()));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::InvalidSizes("sizes must be strictly ascending".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| EvalError::ThreadPool(e.to_string()))?;
    pool.install(|| {
        sizes
            .iter()
            .map(|&size| {
                let ds = synthesize(&SyntheticConfig::crm(size, 0.44, hp.seed))?;
                let start = Instant::now();
                let out = train(&ds, hp, scheme)?;
                let seconds = start.elapsed().as_secs_f64();
                Ok(BenchRow {
                    size,
                    seconds,
                    per_instance: seconds / size as f64,
                    epochs: out.log.len(),
                })
            })
            .collect()
    })
}
