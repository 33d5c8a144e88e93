//! Latent-factor model trained with heavy-ball momentum SGD on per-instance
//! temporal matrices, with a node-influence driven decay on the data term.

use std::fs;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{validate_sequence, Dataset, EventSequence, GraphError, NodeCatalog, NodeId, NodeInfo, Timestamp};
use crate::tp_matrix::{target_matrix, TpError, WeightScheme};
use crate::tppi::{decay_from_theta, sigmoid, tppi_scores_indexed, FeatureMap, TppiError};

pub const LAMBDA_FLOOR: f64 = 1e-4;
pub const LAMBDA_DECAY: f64 = 0.95;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-3;
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has no instances")]
    EmptyDataset,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparam(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { epoch: usize, what: &'static str },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tp(#[from] TpError),
    #[error(transparent)]
    Tppi(#[from] TppiError),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),
}

fn default_alpha() -> usize {
    3
}
fn default_lambda0() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    0.9
}
fn default_max_epochs() -> usize {
    1000
}
fn default_k() -> usize {
    16
}

/// Training hyperparameters. `beta` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(rename = "M", default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sum the data term over the prefix snapshots ending at events
    /// `max(1, T - alpha) ..= T` instead of the full instance only.
    #[serde(default)]
    pub snapshots: bool,
    /// Scale reconstruction rows by node influence.
    #[serde(default)]
    pub influence_rows: bool,
}

impl Hyperparams {
    pub fn new(beta: f64) -> Self {
        Self {
            alpha: default_alpha(),
            lambda0: default_lambda0(),
            beta,
            gamma: default_gamma(),
            max_epochs: default_max_epochs(),
            k: default_k(),
            seed: 0,
            snapshots: false,
            influence_rows: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidHyperparam(m));
        if self.alpha == 0 {
            return bad("alpha must be a positive integer".into());
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= LAMBDA_FLOOR) {
            return bad(format!("lambda must be at least {LAMBDA_FLOOR}, got {}", self.lambda0));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.max_epochs == 0 {
            return bad("M must be a positive integer".into());
        }
        if self.k == 0 {
            return bad("k must be a positive integer".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub catalog: NodeCatalog,
    pub scheme: WeightScheme,
    pub hyperparams: Hyperparams,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub u_last: Array2<f64>,
    pub v_last: Array2<f64>,
    /// Per-epoch objective values.
    pub errors: Vec<f64>,
    pub lambda: f64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(u: &Array2<f64>, v: &Array2<f64>, lambda0: f64) -> Self {
        Self {
            u_last: u.clone(),
            v_last: v.clone(),
            errors: Vec::new(),
            lambda: lambda0,
            epoch: 0,
        }
    }

    pub fn decay_lambda(&mut self) {
        self.lambda = (self.lambda * LAMBDA_DECAY).max(LAMBDA_FLOOR);
    }
}

/// Row scales and decay applied to one instance's data term.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceWeights {
    pub p: Array1<f64>,
    pub d: f64,
}

impl InstanceWeights {
    /// Decay taken from the mean of `p`.
    pub fn from_influence(p: Array1<f64>) -> Self {
        let theta = p.mean().unwrap_or(0.0);
        Self {
            d: decay_from_theta(theta).d,
            p,
        }
    }

    pub fn unit(n: usize, d: f64) -> Self {
        Self {
            p: Array1::ones(n),
            d,
        }
    }
}

fn check_shapes(
    a: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    w: &InstanceWeights,
) -> Result<(), TrainError> {
    let n = u.nrows();
    for got in [a.nrows(), a.ncols(), v.nrows(), w.p.len()] {
        if got != n {
            return Err(TrainError::DimensionMismatch { expected: n, got });
        }
    }
    if v.ncols() != u.ncols() {
        return Err(TrainError::DimensionMismatch {
            expected: u.ncols(),
            got: v.ncols(),
        });
    }
    Ok(())
}

fn sigmoid_uv(u: &Array2<f64>, v: &Array2<f64>, out: &mut Array2<f64>) {
    general_mat_mul(1.0, u, &v.t(), 0.0, out);
    out.mapv_inplace(sigmoid);
}

/// `R(i, j) = p(i) · σ(⟨u_i, v_j⟩)`.
pub fn reconstruction(model: &FactorModel, p: &Array1<f64>) -> Result<Array2<f64>, TrainError> {
    let n = model.u.nrows();
    if p.len() != n {
        return Err(TrainError::DimensionMismatch {
            expected: n,
            got: p.len(),
        });
    }
    let mut s = Array2::zeros((n, n));
    sigmoid_uv(&model.u, &model.v, &mut s);
    Zip::from(s.rows_mut()).and(p).for_each(|mut row, &pi| row *= pi);
    Ok(s)
}

fn frob_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// `d/2 · Σ_t ‖A_t − R‖² + λ/2 (‖U‖² + ‖V‖²)` over the given snapshots.
pub fn objective(
    targets: &[Array2<f64>],
    u: &Array2<f64>,
    v: &Array2<f64>,
    w: &InstanceWeights,
    lambda: f64,
) -> Result<f64, TrainError> {
    let n = u.nrows();
    let mut r = Array2::zeros((n, n));
    let mut data = 0.0;
    for a in targets {
        check_shapes(a, u, v, w)?;
        sigmoid_uv(u, v, &mut r);
        Zip::from(r.rows_mut()).and(&w.p).for_each(|mut row, &pi| row *= pi);
        data += r.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(w.d / 2.0 * data + lambda / 2.0 * (frob_sq(u) + frob_sq(v)))
}

/// Reusable buffers for the gradient of one instance.
#[derive(Debug, Clone)]
pub struct GradWorkspace {
    s: Array2<f64>,
    g: Array2<f64>,
    pub du: Array2<f64>,
    pub dv: Array2<f64>,
}

impl GradWorkspace {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            s: Array2::zeros((n, n)),
            g: Array2::zeros((n, n)),
            du: Array2::zeros((n, k)),
            dv: Array2::zeros((n, k)),
        }
    }
}

fn gradients_into(
    targets: &[Array2<f64>],
    u: &Array2<f64>,
    v: &Array2<f64>,
    w: &InstanceWeights,
    lambda: f64,
    ws: &mut GradWorkspace,
) {
    sigmoid_uv(u, v, &mut ws.s);
    ws.g.fill(0.0);
    for a in targets {
        Zip::from(ws.g.rows_mut())
            .and(ws.s.rows())
            .and(a.rows())
            .and(&w.p)
            .for_each(|mut g, s, a, &pi| {
                Zip::from(&mut g).and(&s).and(&a).for_each(|g, &s, &a| *g += pi * s - a);
            });
    }
    Zip::from(ws.g.rows_mut())
        .and(ws.s.rows())
        .and(&w.p)
        .for_each(|mut g, s, &pi| {
            Zip::from(&mut g)
                .and(&s)
                .for_each(|g, &s| *g *= w.d * pi * s * (1.0 - s));
        });
    ws.du.assign(u);
    general_mat_mul(1.0, &ws.g, v, lambda, &mut ws.du);
    ws.dv.assign(v);
    general_mat_mul(1.0, &ws.g.t(), u, lambda, &mut ws.dv);
}

/// Analytic gradients of [`objective`] with respect to `U` and `V`.
pub fn gradients(
    targets: &[Array2<f64>],
    u: &Array2<f64>,
    v: &Array2<f64>,
    w: &InstanceWeights,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>), TrainError> {
    for a in targets {
        check_shapes(a, u, v, w)?;
    }
    let mut ws = GradWorkspace::new(u.nrows(), u.ncols());
    gradients_into(targets, u, v, w, lambda, &mut ws);
    Ok((ws.du, ws.dv))
}

fn momentum_update(x: &mut Array2<f64>, last: &mut Array2<f64>, dx: &Array2<f64>, lr: f64, gamma: f64) {
    Zip::from(x).and(last).and(dx).for_each(|x, last, &dx| {
        let cur = *x;
        *x = cur - lr * dx + gamma * (cur - *last);
        *last = cur;
    });
}

/// Heavy-ball step with the current learning rate.
/// `U ← U − λ·dU + γ(U − U_last)`, then `U_last` holds the pre-step `U`.
pub fn sgd_step(
    state: &mut TrainState,
    model: &mut FactorModel,
    du: &Array2<f64>,
    dv: &Array2<f64>,
    gamma: f64,
) {
    momentum_update(&mut model.u, &mut state.u_last, du, state.lambda, gamma);
    momentum_update(&mut model.v, &mut state.v_last, dv, state.lambda, gamma);
}

/// Compares the sums of epochs `m-13..=m-10` and `m-3..=m`.
pub fn converged(errors: &[f64], tolerance: f64) -> bool {
    let len = errors.len();
    if len < 14 {
        return false;
    }
    let m = len - 1;
    let early: f64 = errors[m - 13..=m - 10].iter().sum();
    let late: f64 = errors[m - 3..=m].iter().sum();
    (early - late).abs() < tolerance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub rmse: f64,
    pub mae: f64,
    pub lambda: f64,
    /// Mean decay value over instances.
    pub decay: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FactorModel,
    pub state: TrainState,
    pub log: Vec<EpochRecord>,
    pub converged: bool,
}

impl TrainOutcome {
    pub fn final_rmse(&self) -> f64 {
        self.log.last().map(|r| r.rmse).unwrap_or(f64::NAN)
    }
}

struct Prepared {
    idx: Vec<usize>,
    /// Full-instance matrix; also the pair weights for influence.
    full: Array2<f64>,
    targets: Vec<Array2<f64>>,
}

fn prepare(ds: &Dataset, scheme: WeightScheme, hp: &Hyperparams) -> Result<Vec<Prepared>, TrainError> {
    ds.instances
        .par_iter()
        .map(|seq| {
            let idx = seq
                .events
                .iter()
                .map(|e| {
                    ds.catalog.index_of(e.node).ok_or(GraphError::UnknownNode {
                        instance: seq.instance_id.clone(),
                        node: e.node,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let full = target_matrix(seq, &ds.catalog, scheme)?;
            let targets = if hp.snapshots && seq.len() > 1 {
                let first = seq.len().saturating_sub(hp.alpha).max(1);
                (first..=seq.len())
                    .map(|len| target_matrix(&seq.prefix(len), &ds.catalog, scheme))
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                vec![full.clone()]
            };
            Ok(Prepared { idx, full, targets })
        })
        .collect()
}

fn instance_weights(prep: &Prepared, features: &FeatureMap, hp: &Hyperparams, n: usize) -> InstanceWeights {
    let scores = tppi_scores_indexed(&prep.idx, features, &prep.full, hp.alpha, hp.beta);
    let theta = scores.iter().map(|&(_, p)| p).sum::<f64>() / scores.len() as f64;
    let d = decay_from_theta(theta).d;
    if hp.influence_rows {
        let mut p = Array1::from_elem(n, theta);
        for (v, s) in scores {
            p[v] = s;
        }
        InstanceWeights { p, d }
    } else {
        InstanceWeights::unit(n, d)
    }
}

fn init_factors(n: usize, k: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let dist = Uniform::new_inclusive(0.0, 0.1);
    let u = Array2::from_shape_simple_fn((n, k), || dist.sample(rng));
    let v = Array2::from_shape_simple_fn((n, k), || dist.sample(rng));
    (u, v)
}

struct EpochTotals {
    objective_data: f64,
    sq: f64,
    abs: f64,
    count: usize,
}

fn evaluate_epoch(prepared: &[Prepared], weights: &[InstanceWeights], u: &Array2<f64>, v: &Array2<f64>) -> EpochTotals {
    let n = u.nrows();
    let mut s = Array2::zeros((n, n));
    sigmoid_uv(u, v, &mut s);
    let parts: Vec<(f64, f64, f64, usize)> = prepared
        .par_iter()
        .zip(weights.par_iter())
        .map(|(prep, w)| {
            let mut sq = 0.0;
            let mut abs = 0.0;
            let mut count = 0;
            for a in &prep.targets {
                for ((i, j), &target) in a.indexed_iter() {
                    let r = w.p[i] * s[[i, j]] - target;
                    sq += r * r;
                    abs += r.abs();
                }
                count += a.len();
            }
            (w.d / 2.0 * sq, sq, abs, count)
        })
        .collect();
    let mut totals = EpochTotals {
        objective_data: 0.0,
        sq: 0.0,
        abs: 0.0,
        count: 0,
    };
    for (o, sq, abs, c) in parts {
        totals.objective_data += o;
        totals.sq += sq;
        totals.abs += abs;
        totals.count += c;
    }
    totals
}

/// Trains until the convergence test passes or `M` epochs have run.
pub fn train(ds: &Dataset, hp: &Hyperparams, scheme: WeightScheme) -> Result<TrainOutcome, TrainError> {
    hp.validate()?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n = ds.catalog.len();
    let prepared = prepare(ds, scheme, hp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let (u, v) = init_factors(n, hp.k, &mut rng);
    let mut state = TrainState::new(&u, &v, hp.lambda0);
    let mut model = FactorModel {
        catalog: ds.catalog.clone(),
        scheme,
        hyperparams: hp.clone(),
        u,
        v,
    };
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut ws = GradWorkspace::new(n, hp.k);
    let mut log = Vec::new();
    let mut done = false;

    while state.epoch < hp.max_epochs {
        let epoch = state.epoch;
        let features = FeatureMap::new(model.u.clone())?;
        let weights: Vec<InstanceWeights> = prepared
            .par_iter()
            .map(|prep| instance_weights(prep, &features, hp, n))
            .collect();
        order.shuffle(&mut rng);
        for &i in &order {
            gradients_into(&prepared[i].targets, &model.u, &model.v, &weights[i], state.lambda, &mut ws);
            sgd_step(&mut state, &mut model, &ws.du, &ws.dv, hp.gamma);
        }
        if !model.u.iter().chain(model.v.iter()).all(|x| x.is_finite()) {
            return Err(TrainError::NonFinite {
                epoch,
                what: "parameters",
            });
        }
        let totals = evaluate_epoch(&prepared, &weights, &model.u, &model.v);
        let objective = totals.objective_data / prepared.len() as f64
            + state.lambda / 2.0 * (frob_sq(&model.u) + frob_sq(&model.v));
        if !objective.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                what: "objective",
            });
        }
        let mean_decay = weights.iter().map(|w| w.d).sum::<f64>() / weights.len() as f64;
        log.push(EpochRecord {
            epoch,
            objective,
            rmse: (totals.sq / totals.count as f64).sqrt(),
            mae: totals.abs / totals.count as f64,
            lambda: state.lambda,
            decay: mean_decay,
        });
        log::debug!("epoch {epoch}: objective {objective:.6e} rmse {:.6}", (totals.sq / totals.count as f64).sqrt());
        state.errors.push(objective);
        state.epoch += 1;
        state.decay_lambda();
        if converged(&state.errors, CONVERGENCE_TOLERANCE) {
            done = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        state,
        log,
        converged: done,
    })
}

/// Ranks candidate next nodes for `seq` at `query_time`.
///
/// The current node is never a candidate; visited nodes are dropped unless
/// the catalog marks them revisitable. Ties go to the lower id.
pub fn predict_next(
    model: &FactorModel,
    seq: &EventSequence,
    query_time: Timestamp,
) -> Result<Vec<(NodeId, f64)>, TrainError> {
    let seq = validate_sequence(seq.clone().with_horizon(query_time), &model.catalog)?;
    let catalog = &model.catalog;
    let weights = target_matrix(&seq, catalog, model.scheme)?;
    let idx: Vec<usize> = seq
        .events
        .iter()
        .map(|e| catalog.index_of(e.node).expect("validated"))
        .collect();
    let features = FeatureMap::new(model.u.clone())?;
    let hp = &model.hyperparams;
    let last = *idx.last().expect("validated sequence is non-empty");
    let p_last = tppi_scores_indexed(&idx, &features, &weights, hp.alpha, hp.beta)
        .into_iter()
        .find(|&(v, _)| v == last)
        .map(|(_, p)| p)
        .expect("last node has a score");
    let u_last = model.u.row(last);
    let mut ranked: Vec<(NodeId, f64)> = (0..catalog.len())
        .filter(|&j| j != last)
        .filter(|&j| catalog.node(j).revisitable || !idx.contains(&j))
        .map(|j| (catalog.node(j).id, p_last * sigmoid(u_last.dot(&model.v.row(j)))))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    catalog: Vec<NodeInfo>,
    scheme: WeightScheme,
    hyperparams: Hyperparams,
    n: usize,
    k: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FactorModel {
    pub fn to_json(&self) -> Result<String, TrainError> {
        let file = ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            catalog: self.catalog.nodes().to_vec(),
            scheme: self.scheme,
            hyperparams: self.hyperparams.clone(),
            n: self.u.nrows(),
            k: self.u.ncols(),
            u: self.u.iter().copied().collect(),
            v: self.v.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(TrainError::SchemaVersion(file.schema_version));
        }
        let catalog = NodeCatalog::new(file.catalog)?;
        if catalog.len() != file.n {
            return Err(TrainError::DimensionMismatch {
                expected: catalog.len(),
                got: file.n,
            });
        }
        let shape = |data: Vec<f64>| {
            let got = data.len();
            Array2::from_shape_vec((file.n, file.k), data).map_err(|_| TrainError::DimensionMismatch {
                expected: file.n * file.k,
                got,
            })
        };
        let u = shape(file.u)?;
        let v = shape(file.v)?;
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(TrainError::NonFinite {
                epoch: 0,
                what: "stored parameters",
            });
        }
        Ok(Self {
            catalog,
            scheme: file.scheme,
            hyperparams: file.hyperparams,
            u,
            v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
