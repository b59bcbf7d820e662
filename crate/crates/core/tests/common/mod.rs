//! Helpers shared by the integration tests: random graphs and an
//! independent dense eigensolver.

#![allow(dead_code)]

use balgraph::graph::{PolarityVector, SignedGraph};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected random topology: a random spanning tree plus `extra` chords,
/// all with unit weight.
pub fn random_topology(n: usize, extra: usize, rng: &mut impl Rng) -> SignedGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = std::collections::BTreeSet::new();
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        let (a, b) = (order[k].min(parent), order[k].max(parent));
        edges.insert((a, b));
    }
    let max_edges = n * (n - 1) / 2;
    let target = (edges.len() + extra).min(max_edges);
    while edges.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    SignedGraph::new(n, edges.into_iter().map(|(a, b)| (a, b, 1.0))).unwrap()
}

/// Random connected graph with weights of either sign.
pub fn random_signed_graph(n: usize, extra: usize, rng: &mut impl Rng) -> SignedGraph {
    let topo = random_topology(n, extra, rng);
    topo.map_weights(|_| {
        let m = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .unwrap()
}

pub fn random_polarity(n: usize, rng: &mut impl Rng) -> PolarityVector {
    PolarityVector::new((0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect()).unwrap()
}

/// Random graph that is balanced under `beta`.
pub fn random_balanced_graph(n: usize, extra: usize, beta: &PolarityVector, rng: &mut impl Rng) -> SignedGraph {
    let topo = random_topology(n, extra, rng);
    let b = beta.as_slice();
    topo.map_weights(|e| f64::from(b[e.i] * b[e.j]) * rng.random_range(0.1..2.0)).unwrap()
}

pub fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Ascending eigenvalues from nalgebra.
pub fn oracle_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(to_nalgebra(a)).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Eigenvalues and eigenvectors (columns) from nalgebra, ascending.
pub fn oracle_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let e = SymmetricEigen::new(to_nalgebra(a));
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&x, &y| e.eigenvalues[x].total_cmp(&e.eigenvalues[y]));
    let vals = order.iter().map(|&k| e.eigenvalues[k]).collect();
    let vecs = Array2::from_shape_fn(a.dim(), |(i, c)| e.eigenvectors[(i, order[c])]);
    (vals, vecs)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn gaussian_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn gaussian_matrix(r: usize, c: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_vec((r, c), gaussian_vec(r * c, rng)).unwrap()
}
