use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{PolarityVector, SignedGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `D - W` with `D = diag(W 1)`; self-loops cancel out.
    Combinatorial,
    /// `D - W + diag(W)`: self-loop weights land on the diagonal.
    Generalized,
    /// `D^s - W` with `D^s_ii = sum_j |W_ij|`.
    Signed,
}

/// Dense symmetric Laplacian matrix tagged with the variant that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: Array2<f64>,
    kind: LaplacianKind,
}

impl Laplacian {
    /// Wraps a dense matrix. The matrix must be square and symmetric to
    /// within `1e-12` relative.
    pub fn from_matrix(matrix: Array2<f64>, kind: LaplacianKind) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, actual: c });
        }
        let scale = matrix.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..r {
            for j in (i + 1)..r {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidGraph(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Laplacian { matrix, kind })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn build_laplacian(g: &SignedGraph, kind: LaplacianKind) -> Laplacian {
    let n = g.n_nodes();
    let mut l = Array2::zeros((n, n));
    for e in g.edges() {
        l[[e.i, e.j]] -= e.w;
        l[[e.j, e.i]] -= e.w;
        let d = match kind {
            LaplacianKind::Signed => e.w.abs(),
            _ => e.w,
        };
        l[[e.i, e.i]] += d;
        l[[e.j, e.j]] += d;
    }
    for (i, &s) in g.self_loops().iter().enumerate() {
        l[[i, i]] += match kind {
            LaplacianKind::Combinatorial => 0.0,
            LaplacianKind::Generalized => s,
            LaplacianKind::Signed => s.abs() - s,
        };
    }
    Laplacian { matrix: l, kind }
}

/// Graph Laplacian regulariser `x^T L x`.
pub fn glr(l: &Laplacian, x: ArrayView1<f64>) -> Result<f64> {
    if x.len() != l.n() {
        return Err(Error::DimensionMismatch {
            expected: l.n(),
            actual: x.len(),
        });
    }
    Ok(x.dot(&l.matrix.dot(&x)))
}

/// `trace(X^T L X)`: the regulariser summed over the columns of `X`.
pub fn glr_matrix(l: &Laplacian, x: ArrayView2<f64>) -> Result<f64> {
    if x.nrows() != l.n() {
        return Err(Error::DimensionMismatch {
            expected: l.n(),
            actual: x.nrows(),
        });
    }
    let lx = l.matrix.dot(&x);
    Ok(lx.iter().zip(x.iter()).map(|(a, b)| a * b).sum())
}

/// Symmetric normalisation `w_ij / (sqrt(a_i) sqrt(a_j))` with
/// `a_i = sum_l |w_il|`. Nodes without edges pass through; self-loops are
/// kept as they are.
pub fn normalize_weights(g: &SignedGraph) -> Result<SignedGraph> {
    let mut abs_deg = vec![0.0; g.n_nodes()];
    for e in g.edges() {
        abs_deg[e.i] += e.w.abs();
        abs_deg[e.j] += e.w.abs();
    }
    for e in g.edges() {
        for node in [e.i, e.j] {
            if abs_deg[node] <= 0.0 {
                return Err(Error::IsolatedNode(node));
            }
        }
    }
    let mut out = g.clone();
    for e in &mut out.edges {
        e.w /= (abs_deg[e.i] * abs_deg[e.j]).sqrt();
    }
    Ok(out)
}

/// Gershgorin shift: `delta = max(-min_i (L_ii - sum_{j != i} |L_ij|), 0)`.
/// Returns `L + delta I` and `delta`.
pub fn gct_shift(l: &Laplacian) -> (Laplacian, f64) {
    let n = l.n();
    let mut left_end = f64::INFINITY;
    for (i, row) in l.matrix.rows().into_iter().enumerate() {
        let radius: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v.abs())
            .sum();
        left_end = left_end.min(row[i] - radius);
    }
    let delta = if n == 0 { 0.0 } else { (-left_end).max(0.0) };
    let mut m = l.matrix.clone();
    if delta > 0.0 {
        for i in 0..n {
            m[[i, i]] += delta;
        }
    }
    (Laplacian { matrix: m, kind: l.kind }, delta)
}

/// `T L T` with `T = diag(beta)`. Fails if any off-diagonal entry of the
/// result is positive, i.e. `beta` does not match the edge signs.
pub fn similarity_transform(l: &Laplacian, beta: &PolarityVector) -> Result<Laplacian> {
    let n = l.n();
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: beta.len(),
        });
    }
    let b = beta.as_slice();
    let mut m = l.matrix.clone();
    for i in 0..n {
        for j in 0..n {
            if b[i] != b[j] {
                m[[i, j]] = -m[[i, j]];
            }
            if i != j && m[[i, j]] > 0.0 {
                return Err(Error::NotBalanced {
                    i,
                    j,
                    value: m[[i, j]],
                });
            }
        }
    }
    Ok(Laplacian { matrix: m, kind: l.kind })
}

/// Compressed sparse row storage of a symmetric matrix, used where
/// matrix-vector products must scale with the edge count.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl CsrMatrix {
    /// Sparse counterpart of [`build_laplacian`].
    pub fn laplacian(g: &SignedGraph, kind: LaplacianKind) -> Self {
        let n = g.n_nodes();
        let mut diag = vec![0.0; n];
        let nbrs = g.neighbors();
        for (i, list) in nbrs.iter().enumerate() {
            for &(_, w) in list {
                diag[i] += match kind {
                    LaplacianKind::Signed => w.abs(),
                    _ => w,
                };
            }
        }
        for (i, &s) in g.self_loops().iter().enumerate() {
            diag[i] += match kind {
                LaplacianKind::Combinatorial => 0.0,
                LaplacianKind::Generalized => s,
                LaplacianKind::Signed => s.abs() - s,
            };
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for (i, list) in nbrs.into_iter().enumerate() {
            let mut entries: Vec<(usize, f64)> = list.into_iter().map(|(j, w)| (j, -w)).collect();
            entries.push((i, diag[i]));
            entries.sort_unstable_by_key(|&(j, _)| j);
            for (j, v) in entries {
                col.push(j);
                val.push(v);
            }
            row_ptr.push(col.len());
        }
        CsrMatrix { n, row_ptr, col, val }
    }

    pub fn from_dense(m: ArrayView2<f64>) -> Self {
        let n = m.nrows();
        let mut row_ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        for row in m.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col.push(j);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        CsrMatrix { n, row_ptr, col, val }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *o = self.col[s..e]
                .iter()
                .zip(&self.val[s..e])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[[i, self.col[k]]] = self.val[k];
            }
        }
        m
    }
}
