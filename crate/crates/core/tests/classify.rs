mod common;

use balgraph::classify::{decide, metrics_table, ClassifierPair, MetricsReport};
use balgraph::spectral::FilterSpec;
use balgraph::unrolled::{Architecture, Chunking, DenoiserModel};
use common::*;
use ndarray::Array2;
use proptest::prelude::*;

const LEN: usize = 8;

fn model(filter: FilterSpec, n: usize, seed: u64) -> DenoiserModel {
    let arch = Architecture {
        n_blocks: 1,
        conv_layers: 1,
        channels: 2,
        kernel: 3,
        stride: 1,
        feature_dim: 3,
        filter,
        ..Architecture::default()
    };
    let chunking = Chunking {
        n_channels: n,
        n_chunks: 1,
        chunk_len: LEN,
    };
    let mut r = rng(seed);
    let topo = random_topology(n, n, &mut r);
    DenoiserModel::new(&arch, topo, chunking, &mut r).unwrap()
}

#[test]
fn identity_denoiser_wins_every_input() {
    let n = 9;
    let pair = ClassifierPair::new(model(FilterSpec::ideal(n), n, 1), model(FilterSpec::ideal(2), n, 1)).unwrap();
    let mut r = rng(2);
    for _ in 0..20 {
        let y = gaussian_matrix(n, LEN, &mut r);
        let p = pair.classify(y.view()).unwrap();
        assert!(p.err0 < 1e-16);
        assert!(p.err1 > 0.0);
        assert_eq!(p.class, 0);
    }
}

#[test]
fn perfect_predictions_score_one() {
    let r = MetricsReport::from_labels(&[0, 1, 1, 0, 1], &[0, 1, 1, 0, 1]).unwrap();
    assert_eq!((r.accuracy, r.f1, r.precision, r.recall, r.specificity, r.g_mean), (1.0, 1.0, 1.0, 1.0, 1.0, 1.0));
    assert!(r.undefined.is_empty());
}

#[test]
fn mismatched_models_are_rejected() {
    assert!(ClassifierPair::new(model(FilterSpec::ideal(2), 6, 1), model(FilterSpec::ideal(2), 7, 1)).is_err());
}

#[test]
fn evaluation_is_permutation_invariant_and_deterministic() {
    let n = 8;
    let pair = ClassifierPair::new(model(FilterSpec::sigmoid(0.4), n, 3), model(FilterSpec::sigmoid(0.9), n, 4)).unwrap();
    let mut r = rng(5);
    let signals: Vec<Array2<f64>> = (0..12).map(|_| gaussian_matrix(n, LEN, &mut r)).collect();
    let labels: Vec<u8> = (0..12).map(|k| (k % 3 == 0) as u8).collect();
    let (a, preds_a) = pair.evaluate(&signals, &labels).unwrap();
    let (again, preds_again) = pair.evaluate(&signals, &labels).unwrap();
    assert_eq!(a, again);
    assert_eq!(preds_a, preds_again);
    let rev_signals: Vec<Array2<f64>> = signals.iter().rev().cloned().collect();
    let rev_labels: Vec<u8> = labels.iter().rev().copied().collect();
    let (b, _) = pair.evaluate(&rev_signals, &rev_labels).unwrap();
    assert_eq!(a, b);
    assert!(metrics_table(&[("all".into(), &a)]).starts_with("# positive class: 1"));
}

proptest! {
    #[test]
    fn decision_is_scale_invariant(e0 in 0.0f64..1e3, e1 in 0.0f64..1e3, k in 1e-3f64..1e3, tie in 0u8..2) {
        prop_assert_eq!(decide(e0, e1, tie), decide(k * e0, k * e1, tie));
    }

    #[test]
    fn metrics_are_consistent_with_counts(labels in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
        let truth: Vec<u8> = labels.iter().map(|p| p.0).collect();
        let pred: Vec<u8> = labels.iter().map(|p| p.1).collect();
        let r = MetricsReport::from_labels(&truth, &pred).unwrap();
        prop_assert_eq!(r.n_samples(), labels.len());
        let correct = labels.iter().filter(|p| p.0 == p.1).count();
        prop_assert!((r.accuracy - correct as f64 / labels.len() as f64).abs() < 1e-15);
        prop_assert!((r.g_mean - (r.recall * r.specificity).sqrt()).abs() < 1e-15);
        for v in [r.accuracy, r.precision, r.recall, r.specificity, r.f1, r.g_mean] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r.undefined.contains(&"recall".to_string()), r.tp + r.fn_ == 0);
    }
}
