//! Lanczos tridiagonalisation with full reorthogonalisation and the
//! Krylov approximation of spectral filters,
//! `g(L) y ~ ||y|| U_m g(H_m) e_1`.

use ndarray::{Array1, Array2, ArrayView1};

use super::eigen::eigh_tridiagonal;
use super::filter::{Backend, FilterSpec, FilterMode};
use crate::error::{Error, Result};
use crate::graph::{CsrMatrix, Laplacian};

/// Anything that can multiply a vector by a symmetric matrix.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl SymmetricOperator for Array2<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.rows()) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

impl SymmetricOperator for Laplacian {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.matrix().apply(x, out)
    }
}

impl SymmetricOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.mul_vec(x, out)
    }
}

#[derive(Debug, Clone)]
pub struct LanczosBasis {
    /// Orthonormal Krylov basis, one column per step (`n x k`).
    pub basis: Array2<f64>,
    /// Diagonal of the tridiagonal projection (length `k`).
    pub alpha: Vec<f64>,
    /// Off-diagonal of the tridiagonal projection (length `k - 1`).
    pub beta: Vec<f64>,
    /// Set when an invariant subspace was found before reaching the
    /// requested dimension; the basis is then truncated.
    pub breakdown: bool,
}

impl LanczosBasis {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Dense `k x k` tridiagonal matrix `H`.
    pub fn tridiagonal(&self) -> Array2<f64> {
        let k = self.dim();
        let mut h = Array2::zeros((k, k));
        for (i, &a) in self.alpha.iter().enumerate() {
            h[[i, i]] = a;
        }
        for (i, &b) in self.beta.iter().enumerate() {
            h[[i, i + 1]] = b;
            h[[i + 1, i]] = b;
        }
        h
    }
}

const BREAKDOWN_TOL: f64 = 1e-12;

pub fn lanczos_basis<A: SymmetricOperator + ?Sized>(op: &A, y: ArrayView1<f64>, m: usize) -> Result<LanczosBasis> {
    let n = op.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    if m == 0 || m > n {
        return Err(Error::InvalidFilter(format!("Krylov dimension {m} outside [1, {n}]")));
    }
    let norm = y.dot(&y).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidFilter("Lanczos start vector must be nonzero and finite".into()));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    cols.push(y.iter().map(|v| v / norm).collect());
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut w = vec![0.0; n];
    let mut breakdown = false;
    let mut scale: f64 = 1.0;
    loop {
        let k = cols.len() - 1;
        op.apply(&cols[k], &mut w);
        let a = dot(&w, &cols[k]);
        alpha.push(a);
        scale = scale.max(a.abs());
        if cols.len() == m {
            break;
        }
        // classical Gram-Schmidt against the whole basis, twice
        for _ in 0..2 {
            let coeffs: Vec<f64> = cols.iter().map(|c| dot(&w, c)).collect();
            for (c, &h) in cols.iter().zip(&coeffs) {
                for (wi, ci) in w.iter_mut().zip(c) {
                    *wi -= h * ci;
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        if b < BREAKDOWN_TOL * scale {
            breakdown = true;
            break;
        }
        beta.push(b);
        scale = scale.max(b);
        cols.push(w.iter().map(|v| v / b).collect());
    }
    let k = cols.len();
    let mut basis = Array2::zeros((n, k));
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            basis[[i, j]] = v;
        }
    }
    Ok(LanczosBasis {
        basis,
        alpha,
        beta,
        breakdown,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Krylov approximation of the spectral filter. In ideal mode the number of
/// retained Ritz components is `round(omega * m / n)`, capped at the basis
/// size. A breakdown silently truncates the basis; the result is then exact
/// on the Krylov-reachable part of `y`.
pub fn lp_filter_lanczos<A: SymmetricOperator + ?Sized>(
    op: &A,
    y: ArrayView1<f64>,
    spec: &FilterSpec,
) -> Result<Array1<f64>> {
    let n = op.dim();
    spec.validate(n)?;
    let m = match spec.backend {
        Backend::Lanczos { m } => m,
        Backend::Exact => {
            return Err(Error::InvalidFilter("lp_filter_lanczos needs a Lanczos backend".into()))
        }
    };
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    let norm = y.dot(&y).sqrt();
    if norm == 0.0 {
        return Ok(Array1::zeros(n));
    }
    let lb = lanczos_basis(op, y, m)?;
    let k = lb.dim();
    let ritz = eigh_tridiagonal(&lb.alpha, &lb.beta)?;
    let kept = match spec.mode {
        FilterMode::Ideal => ((spec.omega * m as f64 / n as f64).round() as usize).min(k),
        FilterMode::Sigmoid => k,
    };
    // g(H) e_1 = Z g(Theta) Z^T e_1
    let mut coeff = Array1::<f64>::zeros(k);
    for (j, &theta) in ritz.values.iter().enumerate() {
        let g = spec.response(j, theta, kept);
        if g == 0.0 {
            continue;
        }
        let z0 = ritz.vectors[[0, j]];
        coeff.scaled_add(g * z0, &ritz.vectors.column(j));
    }
    Ok(lb.basis.dot(&coeff) * norm)
}
