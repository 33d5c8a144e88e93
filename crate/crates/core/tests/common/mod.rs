//! Seeded generators and independent oracles shared by the test targets.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpnm::graph::{Dataset, Event, EventSequence, NodeCatalog, NodeId, SchemaKind};
use tpnm::trainer::{gradients, objective, InstanceWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn catalog(n: u32) -> NodeCatalog {
    NodeCatalog::from_ids((1..=n).map(NodeId)).unwrap()
}

/// Valid sequence over nodes `1..=n` with repeats allowed, gaps of
/// 1..=gap_max seconds and a running time at or after the last event.
pub fn random_sequence(r: &mut ChaCha8Rng, n: u32, max_len: usize, gap_max: i64) -> EventSequence {
    let len = r.gen_range(1..=max_len);
    let mut t = r.gen_range(-1_000_000i64..1_000_000);
    let mut events = Vec::with_capacity(len);
    for i in 0..len {
        if i > 0 {
            t += r.gen_range(1..=gap_max);
        }
        events.push(Event::new(r.gen_range(1..=n), t));
    }
    let extra = if r.gen_bool(0.5) { 0 } else { r.gen_range(0..=gap_max) };
    EventSequence::new(format!("r{}", r.gen::<u32>()), events).with_horizon(t + extra)
}

pub fn random_dataset(seed: u64, instances: usize, n: u32, max_len: usize) -> Dataset {
    let mut r = rng(seed);
    let seqs = (0..instances)
        .map(|_| {
            let s = random_sequence(&mut r, n, max_len, 500);
            let h = s.last().unwrap().t;
            s.with_horizon(h)
        })
        .collect();
    Dataset::new(catalog(n), seqs, SchemaKind::Synthetic).unwrap()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Entry-by-entry evaluation of
/// `d/2 Σ_t Σ_ij (A_t(i,j) - p_i σ(u_i·v_j))² + λ/2 (ΣU² + ΣV²)`.
pub fn scalar_objective(
    targets: &[Array2<f64>],
    u: &Array2<f64>,
    v: &Array2<f64>,
    p: &[f64],
    d: f64,
    lambda: f64,
) -> f64 {
    let n = u.nrows();
    let k = u.ncols();
    let mut data = 0.0;
    for a in targets {
        for i in 0..n {
            for j in 0..n {
                let mut dot = 0.0;
                for c in 0..k {
                    dot += u[[i, c]] * v[[j, c]];
                }
                let r = p[i] * logistic(dot);
                data += (a[[i, j]] - r).powi(2);
            }
        }
    }
    let mut reg = 0.0;
    for x in u.iter().chain(v.iter()) {
        reg += x * x;
    }
    d / 2.0 * data + lambda / 2.0 * reg
}

/// Per instance, counts (first node, j) pairs over every other catalog node
/// j: observed when j is visited after the first event.
pub fn brute_force_ratio(ds: &Dataset) -> (u64, u64) {
    let mut absent = 0;
    let mut observed = 0;
    for seq in &ds.instances {
        let first = seq.events[0].node;
        for j in ds.catalog.ids() {
            if j == first {
                continue;
            }
            if seq.events.iter().skip(1).any(|e| e.node == j) {
                observed += 1;
            } else {
                absent += 1;
            }
        }
    }
    (absent, observed)
}

/// Relative gradient error with a 1e-7 floor on the scale so that entries
/// near zero are compared in absolute terms.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

const H: f64 = 1e-5;

pub struct Case {
    pub targets: Vec<Array2<f64>>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub w: InstanceWeights,
    pub lambda: f64,
}

pub fn random_case(r: &mut ChaCha8Rng, max_n: usize, max_k: usize) -> Case {
    let n = r.gen_range(1..=max_n);
    let k = r.gen_range(1..=max_k);
    let snaps = r.gen_range(1..=3);
    let targets = (0..snaps)
        .map(|_| Array2::from_shape_simple_fn((n, n), || r.gen_range(1e-3..=1.0)))
        .collect();
    let u = Array2::from_shape_simple_fn((n, k), || r.gen_range(-1.0..1.0));
    let v = Array2::from_shape_simple_fn((n, k), || r.gen_range(-1.0..1.0));
    let p = Array1::from_shape_simple_fn(n, || r.gen_range(0.0..1.0));
    let w = if r.gen_bool(0.5) {
        InstanceWeights::from_influence(p)
    } else {
        InstanceWeights::unit(n, r.gen_range((-1f64).exp()..=1.0))
    };
    Case {
        targets,
        u,
        v,
        w,
        lambda: r.gen_range(0.0..0.1),
    }
}

/// Largest relative error over every entry of dU and dV.
pub fn worst_error(c: &Case) -> f64 {
    let (du, dv) = gradients(&c.targets, &c.u, &c.v, &c.w, c.lambda).unwrap();
    let f = |u: &Array2<f64>, v: &Array2<f64>| objective(&c.targets, u, v, &c.w, c.lambda).unwrap();
    let mut worst: f64 = 0.0;
    for (which, analytic) in [(0, &du), (1, &dv)] {
        for idx in 0..analytic.len() {
            let (i, j) = (idx / analytic.ncols(), idx % analytic.ncols());
            let (mut up, mut down) = ((c.u.clone(), c.v.clone()), (c.u.clone(), c.v.clone()));
            if which == 0 {
                up.0[[i, j]] += H;
                down.0[[i, j]] -= H;
            } else {
                up.1[[i, j]] += H;
                down.1[[i, j]] -= H;
            }
            let numeric = (f(&up.0, &up.1) - f(&down.0, &down.1)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[[i, j]], numeric));
        }
    }
    worst
}

