//! Dense symmetric eigensolver: Householder reduction to tridiagonal form
//! followed by the implicit-shift QL iteration (EISPACK tred2/tql2 lineage).

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::graph::Laplacian;

/// Full eigendecomposition: ascending eigenvalues and orthonormal
/// eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

pub fn eigh(l: &Laplacian) -> Result<EigenPair> {
    eigh_matrix(l.matrix())
}

/// Eigendecomposition of a symmetric matrix (only the lower triangle is
/// read). Each eigenvector is signed so that its largest-magnitude
/// component is positive.
pub fn eigh_matrix(a: &Array2<f64>) -> Result<EigenPair> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: a.ncols() });
    }
    if n == 0 {
        return Ok(EigenPair {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let mut v: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push(if j <= i { a[[i, j]] } else { a[[j, i]] });
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    // tql2 works on eigenvectors stored as rows
    let mut zt = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            zt[i * n + k] = v[k * n + i];
        }
    }
    tql2(n, n, &mut d, &mut e, &mut zt)?;
    let mut vectors = Array2::zeros((n, n));
    for i in 0..n {
        let row = &mut zt[i * n..(i + 1) * n];
        canonical_sign(row);
        for k in 0..n {
            vectors[[k, i]] = row[k];
        }
    }
    Ok(EigenPair {
        values: Array1::from(d),
        vectors,
    })
}

/// Eigendecomposition of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off.len() == diag.len() - 1`).
/// Eigenvectors are returned as columns.
pub fn eigh_tridiagonal(diag: &[f64], off: &[f64]) -> Result<EigenPair> {
    let m = diag.len();
    if m == 0 {
        return Ok(EigenPair {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    if off.len() + 1 != m {
        return Err(Error::DimensionMismatch { expected: m - 1, actual: off.len() });
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; m];
    e[1..].copy_from_slice(off);
    let mut zt = vec![0.0; m * m];
    for i in 0..m {
        zt[i * m + i] = 1.0;
    }
    tql2(m, m, &mut d, &mut e, &mut zt)?;
    let mut vectors = Array2::zeros((m, m));
    for i in 0..m {
        for k in 0..m {
            vectors[[k, i]] = zt[i * m + k];
        }
    }
    Ok(EigenPair {
        values: Array1::from(d),
        vectors,
    })
}

fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Householder tridiagonalisation. On exit `v` (row-major n x n) holds the
/// accumulated orthogonal transform, `d` the diagonal and `e[1..]` the
/// subdiagonal.
fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let idx = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[idx(k, j)] * d[k];
                    e[k] += v[idx(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..(n - 1) {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. `zt` holds one
/// basis vector of length `len` per row; rows are rotated alongside the
/// iteration and finally sorted with the ascending eigenvalues.
fn tql2(n: usize, len: usize, d: &mut [f64], e: &mut [f64], zt: &mut [f64]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    let max_iter = 30 * n.max(10);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::NoConvergence(l));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = zt.split_at_mut((i + 1) * len);
                    let zi = &mut lo[i * len..];
                    let zi1 = &mut hi[..len];
                    for k in 0..len {
                        let t = zi1[k];
                        zi1[k] = s * zi[k] + c * t;
                        zi[k] = c * zi[k] - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    // selection sort keeps the rows paired with their eigenvalues
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().take(n).skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d.swap(i, k);
            for c in 0..len {
                zt.swap(i * len + c, k * len + c);
            }
        }
    }
    Ok(())
}
