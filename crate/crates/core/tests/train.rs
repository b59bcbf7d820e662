mod common;

use balgraph::cli::pipeline::prepare;
use balgraph::data::{split_ratio, synth_two_class, ChunkSpec, SynthConfig};
use balgraph::graph::SignedGraph;
use balgraph::spectral::FilterSpec;
use balgraph::train::{
    batch_loss, corrupt, grad_spectral, init_denoiser, loss_contrastive, loss_plain, mine_hard_pairs, train_denoiser,
    Batch, Objective, Pair, TrainConfig, TrainData,
};
use balgraph::unrolled::{bgl_block, denoise, Architecture, Chunking, DenoiserModel, GraphKind};
use common::*;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use std::sync::OnceLock;

const LEN: usize = 10;

fn three_node_model(omega: f64, seed: u64) -> DenoiserModel {
    let topo = SignedGraph::new(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]).unwrap();
    let arch = Architecture {
        n_blocks: 1,
        conv_layers: 1,
        channels: 2,
        kernel: 3,
        stride: 1,
        feature_dim: 3,
        filter: FilterSpec::sigmoid(omega),
        ..Architecture::default()
    };
    let chunking = Chunking {
        n_channels: 3,
        n_chunks: 1,
        chunk_len: LEN,
    };
    let mut m = DenoiserModel::new(&arch, topo, chunking, &mut rng(seed)).unwrap();
    m.blocks[0].beta = balgraph::graph::PolarityVector::new(vec![-1, 1, 1]).unwrap();
    m
}

fn pairs(count: usize, n: usize, sigma: f64, r: &mut impl rand::Rng) -> Vec<Pair> {
    (0..count)
        .map(|_| {
            let clean = gaussian_matrix(n, LEN, r);
            let noisy = corrupt(clean.view(), sigma, r);
            Pair { clean, noisy }
        })
        .collect()
}

#[test]
fn corruption_has_the_requested_variance() {
    let x = Array2::<f64>::zeros((100, 1000));
    let sigma = 0.3;
    let y = corrupt(x.view(), sigma, &mut rng(1));
    let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "{var}");
    assert_eq!(corrupt(x.view(), 0.0, &mut rng(1)), x);
}

#[test]
fn all_pass_model_has_zero_plain_loss_and_loss_ignores_order() {
    let mut m = three_node_model(0.5, 2);
    m.blocks[0].filter = FilterSpec::ideal(3);
    let mut r = rng(3);
    let noiseless: Vec<Pair> = pairs(4, 3, 0.0, &mut r);
    assert!(loss_plain(&m, &noiseless).unwrap() < 1e-20);
    let noisy = pairs(5, 3, 0.5, &mut r);
    let mut reversed = noisy.clone();
    reversed.reverse();
    let a = loss_plain(&m, &noisy).unwrap();
    let b = loss_plain(&m, &reversed).unwrap();
    assert!((a - b).abs() < 1e-12 * a);
}

#[test]
fn greedy_mining_matches_quadratic_oracle() {
    let mut r = rng(4);
    for _ in 0..20 {
        let a: Vec<Array2<f64>> = (0..10).map(|_| gaussian_matrix(1, 2, &mut r)).collect();
        let b: Vec<Array2<f64>> = (0..10).map(|_| gaussian_matrix(1, 2, &mut r)).collect();
        let av: Vec<ArrayView2<f64>> = a.iter().map(|x| x.view()).collect();
        let bv: Vec<ArrayView2<f64>> = b.iter().map(|x| x.view()).collect();
        let got = mine_hard_pairs(&av, &bv, 7);
        let dist = |i: usize, j: usize| -> f64 { a[i].iter().zip(b[j].iter()).map(|(p, q)| (p - q).powi(2)).sum() };
        let mut used_a = [false; 10];
        let mut used_b = [false; 10];
        let mut expected = Vec::new();
        for _ in 0..7 {
            let mut best = (f64::INFINITY, 0, 0);
            for i in (0..10).filter(|&i| !used_a[i]) {
                for j in (0..10).filter(|&j| !used_b[j]) {
                    if dist(i, j) < best.0 {
                        best = (dist(i, j), i, j);
                    }
                }
            }
            used_a[best.1] = true;
            used_b[best.2] = true;
            expected.push((best.1, best.2));
        }
        assert_eq!(got, expected);
    }
    let shared = gaussian_matrix(1, 2, &mut r);
    let far = shared.mapv(|v| v + 100.0);
    let got = mine_hard_pairs(&[far.view(), shared.view()], &[shared.view()], 5);
    assert_eq!(got, vec![(1, 0)]);
}

#[test]
fn cutoff_gradient_matches_finite_differences_on_three_nodes() {
    let mut r = rng(5);
    let probe = three_node_model(0.0, 6);
    let emb = gaussian_matrix(3, LEN, &mut r);
    let lap = bgl_block(&probe, &probe.blocks[0], emb.view()).unwrap().laplacian;
    let ev = oracle_eigenvalues(lap.matrix());
    let m = three_node_model((ev[0] + ev[2]) / 2.0, 6);
    let batch = Batch {
        own: pairs(3, 3, 0.3, &mut r),
        other: pairs(3, 3, 0.3, &mut r),
        rho: 0.0,
    };
    let g = grad_spectral(&m, &batch).unwrap();
    let h = 1e-4;
    let at = |w: f64| {
        let mut p = m.clone();
        p.blocks[0].filter.omega = w;
        batch_loss(&p, &batch).unwrap()
    };
    let w = m.blocks[0].filter.omega;
    let fd = (at(w + h) - at(w - h)) / (2.0 * h);
    assert!((g.grad[0] - fd).abs() <= 1e-4 * fd.abs(), "{} vs {fd}", g.grad[0]);
}

#[test]
fn saturated_filter_has_no_cutoff_gradient() {
    let mut r = rng(7);
    let m = three_node_model(-50.0, 8);
    let batch = Batch {
        own: pairs(2, 3, 0.3, &mut r),
        other: pairs(2, 3, 0.3, &mut r),
        rho: 1.0,
    };
    assert!(grad_spectral(&m, &batch).unwrap().grad[0].abs() < 1e-12);
}

#[test]
fn inactive_hinge_contributes_no_gradient() {
    let mut r = rng(9);
    let m = three_node_model(1.5, 10);
    let own = pairs(3, 3, 0.3, &mut r);
    let other = pairs(3, 3, 0.3, &mut r);
    // other-class errors are O(1) per entry, far above this margin
    let with_hinge = Batch {
        own: own.clone(),
        other: other.clone(),
        rho: 1e-6,
    };
    let without = Batch { own, other, rho: 0.0 };
    let a = grad_spectral(&m, &with_hinge).unwrap();
    let b = grad_spectral(&m, &without).unwrap();
    assert_eq!(a.grad, b.grad);
}

#[test]
fn ideal_or_lanczos_filters_are_not_trainable() {
    let mut m = three_node_model(0.5, 11);
    m.blocks[0].filter = FilterSpec::ideal(2);
    let mut r = rng(12);
    let batch = Batch {
        own: pairs(1, 3, 0.1, &mut r),
        other: pairs(1, 3, 0.1, &mut r),
        rho: 1.0,
    };
    assert!(grad_spectral(&m, &batch).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn contrastive_loss_bounds(seed in any::<u64>(), rho in 0.0f64..5.0, count in 1usize..5) {
        let mut r = rng(seed);
        let m = three_node_model(rand::Rng::random_range(&mut r, 0.0..2.0), seed);
        let own = pairs(count, 3, 0.3, &mut r);
        let other = pairs(count, 3, 0.3, &mut r);
        let c = loss_contrastive(&m, &own, &other, rho).unwrap();
        let p = loss_plain(&m, &own).unwrap();
        prop_assert!(c >= 0.0);
        prop_assert!(c >= p - rho * count as f64);
        prop_assert!(c <= p + rho * count as f64 + 1e-12);
        prop_assert_eq!(loss_contrastive(&m, &own, &other, 0.0).unwrap(), p);
    }
}

struct Fixture {
    data: [TrainData; 2],
    topology: SignedGraph,
    chunking: Chunking,
    arch: Architecture,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = SynthConfig::default();
        let (ds, truth) = synth_two_class(&cfg, 0).unwrap();
        let prep = prepare(&ds, &truth.topology, &ChunkSpec::default(), &Default::default()).unwrap();
        let split = split_ratio(ds.len(), 0).unwrap();
        Fixture {
            data: [prep.train_data(&split, 0), prep.train_data(&split, 1)],
            topology: prep.topology.clone(),
            chunking: prep.chunking,
            arch: balgraph::cli::config::default_architecture(),
        }
    })
}

fn init(class: usize, cfg: &TrainConfig) -> DenoiserModel {
    let f = fixture();
    init_denoiser(&f.arch, f.topology.clone(), f.chunking, &f.data[class], cfg, class as u64 + 1).unwrap()
}

fn small_data(class: usize, n: usize) -> TrainData {
    let d = &fixture().data[class];
    TrainData {
        train_own: d.train_own[..n].to_vec(),
        train_other: d.train_other[..n].to_vec(),
        val_own: d.val_own.clone(),
        val_other: d.val_other.clone(),
    }
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let m = init(0, &cfg);
    let out = train_denoiser(m.clone(), &fixture().data[0], &cfg, 1).unwrap();
    assert_eq!(out.model, m);
    assert!(out.log.is_empty());
    assert_eq!(out.best_epoch, None);
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let data = small_data(1, 40);
    let run = || {
        let m = init(1, &cfg);
        train_denoiser(m, &data, &cfg, 3).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    let strip = |o: &balgraph::train::TrainOutcome| -> Vec<(usize, f64, f64, f64)> {
        o.log.iter().map(|e| (e.epoch, e.train_loss, e.val_loss, e.lr)).collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn zero_margin_contrastive_equals_plain() {
    let data = small_data(0, 40);
    let contrastive = TrainConfig {
        epochs: 2,
        rho: 0.0,
        objective: Objective::Contrastive,
        ..TrainConfig::default()
    };
    let plain = TrainConfig {
        objective: Objective::Plain,
        ..contrastive.clone()
    };
    let a = train_denoiser(init(0, &contrastive), &data, &contrastive, 4).unwrap();
    let b = train_denoiser(init(0, &plain), &data, &plain, 4).unwrap();
    assert_eq!(a.model, b.model);
}

#[test]
fn trained_pair_losses_decrease_and_discriminate() {
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let f = fixture();
    let mut steps = 0;
    let mut non_increasing = 0;
    let mut models = Vec::new();
    for class in 0..2 {
        let out = train_denoiser(init(class, &cfg), &f.data[class], &cfg, class as u64 + 1).unwrap();
        for w in out.log.windows(2) {
            steps += 1;
            if w[1].train_loss <= w[0].train_loss {
                non_increasing += 1;
            }
        }
        models.push(out.model);
    }
    assert!(steps > 0);
    assert!(non_increasing as f64 >= 0.8 * steps as f64, "{non_increasing}/{steps}");
    let err = |m: &DenoiserModel, xs: &[Array2<f64>]| -> f64 {
        xs.iter()
            .map(|x| {
                let y = denoise(m, x.view()).unwrap();
                x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / xs.len() as f64
    };
    for class in 0..2 {
        let d = &f.data[class];
        let own = err(&models[class], &d.val_own);
        let cross = err(&models[class], &d.val_other);
        assert!(own < cross, "class {class}: own {own} cross {cross}");
    }
}

#[test]
fn positive_kind_initialises_without_polarities() {
    let f = fixture();
    let arch = Architecture {
        graph: GraphKind::Positive,
        ..f.arch.clone()
    };
    let m = init_denoiser(&arch, f.topology.clone(), f.chunking, &f.data[0], &TrainConfig::default(), 1).unwrap();
    assert!(m.blocks.iter().all(|b| b.beta.as_slice().iter().all(|&v| v == 1)));
}
