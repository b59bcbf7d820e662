mod common;

use balgraph::graph::{build_laplacian, normalize_weights, Laplacian, LaplacianKind};
use balgraph::spectral::{
    eigh, eigh_matrix, lanczos_basis, lp_filter_exact, lp_filter_lanczos, sigmoid, Backend, FilterSpec,
};
use common::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn random_laplacian(n: usize, seed: u64) -> Laplacian {
    let mut r = rng(seed);
    let g = random_topology(n, 2 * n, &mut r).map_weights(|_| rand::Rng::random_range(&mut r, 0.2..1.5)).unwrap();
    build_laplacian(&normalize_weights(&g).unwrap(), LaplacianKind::Combinatorial)
}

#[test]
fn positive_graph_has_constant_null_vector() {
    let l = random_laplacian(20, 4);
    let e = eigh(&l).unwrap();
    assert!(e.values[0].abs() < 1e-10);
    let v0 = e.vectors.column(0);
    let c = 1.0 / (20f64).sqrt();
    assert!(v0.iter().all(|v| (v - c).abs() < 1e-8));
}

#[test]
fn lanczos_basis_is_orthonormal_and_projects_the_operator() {
    let l = random_laplacian(32, 9);
    let y = Array1::from(gaussian_vec(32, &mut rng(10)));
    let lb = lanczos_basis(&l, y.view(), 8).unwrap();
    assert_eq!(lb.dim(), 8);
    let u = &lb.basis;
    let gram = u.t().dot(u);
    let eye = Array2::<f64>::eye(8);
    assert!((&gram - &eye).iter().all(|v| v.abs() <= 1e-10));
    let h = u.t().dot(l.matrix()).dot(u);
    let t = lb.tridiagonal();
    assert!((&h - &t).iter().all(|v| v.abs() <= 1e-10), "{h:?} vs {t:?}");
}

#[test]
fn full_krylov_space_keeps_the_spectrum() {
    let l = random_laplacian(24, 12);
    let y = Array1::from(gaussian_vec(24, &mut rng(13)));
    let lb = lanczos_basis(&l, y.view(), 24).unwrap();
    if !lb.breakdown {
        let ritz = oracle_eigenvalues(&lb.tridiagonal());
        assert!(max_abs_diff(&ritz, &oracle_eigenvalues(l.matrix())) < 1e-8);
    }
}

#[test]
fn lanczos_all_pass_returns_input() {
    let l = random_laplacian(30, 14);
    let y = Array1::from(gaussian_vec(30, &mut rng(15)));
    for m in [4, 10, 30] {
        let spec = FilterSpec::ideal(30).with_backend(Backend::Lanczos { m });
        let x = lp_filter_lanczos(&l, y.view(), &spec).unwrap();
        assert!(max_abs_diff(x.as_slice().unwrap(), y.as_slice().unwrap()) < 1e-8, "m = {m}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigh_agrees_with_nalgebra(seed in any::<u64>(), n in 1usize..40) {
        let a = gaussian_matrix(n, n, &mut rng(seed));
        let s = &a + &a.t();
        let e = eigh_matrix(&s).unwrap();
        let oracle = oracle_eigenvalues(&s);
        let scale = 1.0 + oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(e.values.as_slice().unwrap(), &oracle) <= 1e-10 * scale);
        let gram = e.vectors.t().dot(&e.vectors);
        prop_assert!((&gram - &Array2::<f64>::eye(n)).iter().all(|v| v.abs() <= 1e-8));
        let resid = s.dot(&e.vectors) - &e.vectors * &e.values;
        prop_assert!(resid.iter().all(|v| v.abs() <= 1e-8 * scale));
        for c in 0..n {
            let col = e.vectors.column(c);
            let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            prop_assert!(big > 0.0);
        }
    }

    #[test]
    fn ideal_filter_matches_oracle_projection(seed in any::<u64>(), n in 3usize..30, frac in 0.1f64..0.9) {
        let l = random_laplacian(n, seed);
        let (vals, vecs) = oracle_eigen(l.matrix());
        let k = ((n as f64 * frac) as usize).clamp(1, n - 1);
        prop_assume!(vals[k] - vals[k - 1] > 1e-6);
        let y = Array1::from(gaussian_vec(n, &mut rng(seed ^ 1)));
        let vk = vecs.slice(ndarray::s![.., ..k]);
        let expected = vk.dot(&vk.t().dot(&y));
        let x = lp_filter_exact(&l, y.view(), &FilterSpec::ideal(k)).unwrap();
        prop_assert!(max_abs_diff(x.as_slice().unwrap(), expected.as_slice().unwrap()) <= 1e-9 * norm(y.iter().copied()));
    }

    #[test]
    // |alpha (omega - lambda)| stays below 30, where the response is not
    // rounded to exactly 0 or 1
    fn sigmoid_response_is_bounded_and_decreasing(omega in -5.0f64..5.0, off in -2.5f64..2.0, gap in 1e-3f64..0.5) {
        let alpha = 10.0;
        let a = omega + off;
        let g1 = sigmoid(alpha * (omega - a));
        let g2 = sigmoid(alpha * (omega - a - gap));
        prop_assert!(g1 > 0.0 && g1 < 1.0 && g2 > 0.0 && g2 < 1.0);
        prop_assert!(g2 < g1);
    }

    #[test]
    fn full_dimension_lanczos_matches_exact(seed in any::<u64>(), n in 3usize..40) {
        let l = random_laplacian(n, seed);
        let mut y = Array1::from(gaussian_vec(n, &mut rng(seed ^ 2)));
        let nrm = norm(y.iter().copied());
        y /= nrm;
        let (vals, _) = oracle_eigen(l.matrix());
        let k = (n / 2).max(1);
        prop_assume!(vals[k] - vals[k - 1] > 1e-6);
        for spec in [FilterSpec::ideal(k), FilterSpec::sigmoid(vals[k])] {
            let exact = lp_filter_exact(&l, y.view(), &spec).unwrap();
            let approx = lp_filter_lanczos(&l, y.view(), &spec.with_backend(Backend::Lanczos { m: n })).unwrap();
            prop_assert!(max_abs_diff(exact.as_slice().unwrap(), approx.as_slice().unwrap()) <= 1e-8);
        }
    }
}
