mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use tpnm::eval::{correlation_analysis, mann_whitney_auc, rmse};
use tpnm::graph::{dataset_stats, validate_sequence, NodeId};
use tpnm::ingest::{synthesize, SyntheticConfig};
use tpnm::tp_matrix::{adjacency_matrix, normalize_tp, raw_temporal_matrix, tp_matrix, RawTemporalMatrix, WeightScheme};
use tpnm::tppi::{decay_from_theta, influence_max, pair_probability, sigmoid, tppi_vector, FeatureMap};
use tpnm::trainer::{converged, train, FactorModel, Hyperparams, CONVERGENCE_TOLERANCE};

const TP_SCHEMES: [WeightScheme; 2] = [WeightScheme::TpInitial, WeightScheme::TpRecent];

fn features(r: &mut impl Rng, n: usize, k: usize) -> FeatureMap {
    FeatureMap::new(Array2::from_shape_simple_fn((n, k), || r.gen_range(-2.0..2.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tp_entries_bounded_with_unit_diagonal(seed in any::<u64>(), n in 1u32..10) {
        let mut r = common::rng(seed);
        let seq = common::random_sequence(&mut r, n, 25, 10_000);
        let cat = common::catalog(n);
        for scheme in TP_SCHEMES {
            let m = tp_matrix(&seq, &cat, scheme).unwrap();
            for i in 0..m.n() {
                prop_assert_eq!(m.get(i, i), 1.0);
                for j in 0..m.n() {
                    prop_assert!(m.get(i, j) > 0.0 && m.get(i, j) <= 1.0);
                }
            }
        }
    }

    #[test]
    fn tp_matrix_bitwise_shift_invariant(seed in any::<u64>(), offset in -4_000_000_000i64..4_000_000_000) {
        let mut r = common::rng(seed);
        let seq = common::random_sequence(&mut r, 8, 25, 100_000);
        let cat = common::catalog(8);
        for scheme in TP_SCHEMES {
            let a = tp_matrix(&seq, &cat, scheme).unwrap();
            let b = tp_matrix(&seq.shifted(offset), &cat, scheme).unwrap();
            for (x, y) in a.entries().iter().zip(b.entries().iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn normalization_decreases_with_gap(d1 in 0.0f64..1e6, d2 in 0.0f64..1e6, base in 0.0f64..1e6) {
        // one row: diagonal `base`, two off-diagonal raw values
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let raw = Array2::from_shape_vec((3, 3), vec![
            base, base + lo, base + hi,
            0.0, 0.0, 0.0,
            0.0, 0.0, 0.0,
        ]).unwrap();
        let m = normalize_tp(&RawTemporalMatrix::from_entries(raw));
        prop_assert!(m.get(0, 1) >= m.get(0, 2));
    }

    #[test]
    fn adjacency_matches_transition_indicator(seed in any::<u64>(), n in 1u32..8) {
        let mut r = common::rng(seed);
        let seq = common::random_sequence(&mut r, n, 20, 100);
        let cat = common::catalog(n);
        let a = adjacency_matrix(&seq, &cat).unwrap();
        for i in 0..n as usize {
            for j in 0..n as usize {
                let (vi, vj) = (NodeId(i as u32 + 1), NodeId(j as u32 + 1));
                let expected = seq.events.windows(2).any(|w| w[0].node == vi && w[1].node == vj);
                prop_assert_eq!(a.get(i, j), if expected { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn validation_is_idempotent(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let seq = common::random_sequence(&mut r, 6, 20, 50);
        let cat = common::catalog(6);
        let once = validate_sequence(seq.clone(), &cat).unwrap();
        let twice = validate_sequence(once.clone(), &cat).unwrap();
        prop_assert_eq!(&once, &seq);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn stats_ignore_instance_order(seed in any::<u64>()) {
        let ds = common::random_dataset(seed, 20, 7, 12);
        let mut shuffled = ds.instances.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut common::rng(seed ^ 1));
        let a = dataset_stats(&ds);
        let b = dataset_stats(&ds.with_instances(shuffled));
        prop_assert_eq!(a.absent_observed, b.absent_observed);
        prop_assert_eq!(a.total_nodes, b.total_nodes);
        prop_assert!((a.average_degree - b.average_degree).abs() < 1e-12);
    }

    #[test]
    fn pair_probability_in_open_unit_interval(
        f in prop::collection::vec(-3.0f64..3.0, 3),
        g in prop::collection::vec(-3.0f64..3.0, 3),
        a in 0.0f64..1.0,
    ) {
        let p = pair_probability(&f, &g, a).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn pair_probability_monotone_in_weight(
        f in prop::collection::vec(-3.0f64..3.0, 3),
        g in prop::collection::vec(-3.0f64..3.0, 3),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let dot: f64 = f.iter().zip(&g).map(|(x, y)| x * y).sum();
        let (p_lo, p_hi) = (pair_probability(&f, &g, lo).unwrap(), pair_probability(&f, &g, hi).unwrap());
        if dot >= 0.0 {
            prop_assert!(p_lo <= p_hi);
        } else {
            prop_assert!(p_lo >= p_hi);
        }
    }

    #[test]
    fn influence_ordering_invariant_over_beta(seed in any::<u64>(), b1 in 0.0f64..0.99, b2 in 0.0f64..0.99) {
        let mut r = common::rng(seed);
        let seq = common::random_sequence(&mut r, 6, 15, 100);
        let cat = common::catalog(6);
        let f = features(&mut r, 6, 3);
        let w = tp_matrix(&seq, &cat, WeightScheme::TpInitial).unwrap().into_entries();
        let p1 = tppi_vector(&seq, &cat, &f, &w, 3, b1).unwrap();
        let p2 = tppi_vector(&seq, &cat, &f, &w, 3, b2).unwrap();
        for (x, y) in p1.scores.iter().zip(&p2.scores) {
            for (x2, y2) in p1.scores.iter().zip(&p2.scores) {
                if x.1 < x2.1 {
                    prop_assert!(y.1 <= y2.1);
                }
            }
        }
    }

    #[test]
    fn decay_bounded_and_monotone(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (d1, d2) = (decay_from_theta(t1).d, decay_from_theta(t2).d);
        let floor = (-1f64).exp();
        prop_assert!(d1 >= floor && d1 <= 1.0);
        if t1 <= t2 {
            prop_assert!(d1 <= d2);
        }
    }

    #[test]
    fn log_space_product_matches_direct_product(seed in any::<u64>(), alpha in 1usize..5) {
        let mut r = common::rng(seed);
        let seq = common::random_sequence(&mut r, 6, 15, 100);
        let cat = common::catalog(6);
        let f = features(&mut r, 6, 3);
        let w = tp_matrix(&seq, &cat, WeightScheme::TpRecent).unwrap().into_entries();
        let idx: Vec<usize> = seq.events.iter().map(|e| cat.index_of(e.node).unwrap()).collect();
        for i in 0..seq.len() {
            let mut direct = 1.0;
            for j in i.saturating_sub(alpha)..=(i + alpha).min(seq.len() - 1) {
                if j != i {
                    let dot = f.row(idx[i]).dot(&f.row(idx[j]));
                    direct *= sigmoid(dot * w[[idx[i], idx[j]]]);
                }
            }
            let lib = influence_max(&seq, &cat, i, &f, &w, alpha).unwrap();
            prop_assert!((lib - direct).abs() <= 1e-12 * direct, "{} vs {}", lib, direct);
        }
    }

    #[test]
    fn convergence_ignores_old_history(
        old in prop::collection::vec(-1e6f64..1e6, 0..30),
        recent in prop::collection::vec(0.0f64..10.0, 14),
    ) {
        let mut full = old.clone();
        full.extend(&recent);
        prop_assert_eq!(converged(&full, CONVERGENCE_TOLERANCE), converged(&recent, CONVERGENCE_TOLERANCE));
    }

    #[test]
    fn auc_invariant_under_monotone_transform(
        pos in prop::collection::vec(-5.0f64..5.0, 1..10),
        neg in prop::collection::vec(-5.0f64..5.0, 1..10),
    ) {
        let t = |v: &[f64]| v.iter().map(|x| (2.0 * x).exp() + 3.0).collect::<Vec<_>>();
        let a = mann_whitney_auc(&pos, &neg).unwrap();
        let b = mann_whitney_auc(&t(&pos), &t(&neg)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn rmse_non_negative(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..20)) {
        let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assert!(rmse(&p, &t).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn correlation_matrix_symmetric(seed in any::<u64>()) {
        let ds = synthesize(&SyntheticConfig::crm(60, 0.3, seed)).unwrap();
        for scheme in WeightScheme::ALL {
            let rep = correlation_analysis(&ds, scheme).unwrap();
            let n = rep.nodes.len();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(rep.coefficients[i][j], rep.coefficients[j][i]);
                }
            }
        }
    }

    #[test]
    fn model_file_round_trips_bitwise(seed in any::<u64>()) {
        let ds = common::random_dataset(seed, 6, 5, 8);
        let mut hp = Hyperparams::new(0.3);
        hp.max_epochs = 3;
        hp.k = 2;
        hp.seed = seed;
        let model = train(&ds, &hp, WeightScheme::TpInitial).unwrap().model;
        let back = FactorModel::from_json(&model.to_json().unwrap()).unwrap();
        for (a, b) in model.u.iter().chain(model.v.iter()).zip(back.u.iter().chain(back.v.iter())) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back, model);
    }
}

#[test]
fn raw_matrix_rejects_adjacency_scheme() {
    let seq = common::random_sequence(&mut common::rng(1), 3, 5, 10);
    assert!(raw_temporal_matrix(&seq, &common::catalog(3), WeightScheme::Adjacency).is_err());
}
