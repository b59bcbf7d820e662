use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::eigen::{eigh, EigenPair};
use crate::error::{Error, Result};
use crate::graph::Laplacian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Keep the `omega` smallest-eigenvalue components (`omega` is a count).
    Ideal,
    /// Response `sigmoid(alpha * (omega - lambda))` (`omega` is a threshold).
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backend {
    Exact,
    /// Krylov approximation of dimension `m`.
    Lanczos { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub omega: f64,
    pub alpha: f64,
    pub mode: FilterMode,
    pub backend: Backend,
}

pub const DEFAULT_STEEPNESS: f64 = 10.0;

impl FilterSpec {
    pub fn ideal(omega: usize) -> Self {
        FilterSpec {
            omega: omega as f64,
            alpha: DEFAULT_STEEPNESS,
            mode: FilterMode::Ideal,
            backend: Backend::Exact,
        }
    }

    pub fn sigmoid(omega: f64) -> Self {
        FilterSpec {
            omega,
            alpha: DEFAULT_STEEPNESS,
            mode: FilterMode::Sigmoid,
            backend: Backend::Exact,
        }
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.mode {
            FilterMode::Ideal => {
                if self.omega.fract() != 0.0 || self.omega < 1.0 || self.omega > n as f64 {
                    return Err(Error::InvalidFilter(format!(
                        "ideal cutoff must be an integer in [1, {n}], got {}",
                        self.omega
                    )));
                }
            }
            FilterMode::Sigmoid => {
                if !self.omega.is_finite() {
                    return Err(Error::InvalidFilter("sigmoid threshold must be finite".into()));
                }
                if !(self.alpha.is_finite() && self.alpha > 0.0) {
                    return Err(Error::InvalidFilter(format!(
                        "steepness must be positive, got {}",
                        self.alpha
                    )));
                }
            }
        }
        if let Backend::Lanczos { m } = self.backend {
            if m < 1 || m > n {
                return Err(Error::InvalidFilter(format!("Krylov dimension {m} outside [1, {n}]")));
            }
        }
        Ok(())
    }

    /// Frequency response for the `index`-th smallest eigenvalue `lambda`
    /// when `kept` components pass in ideal mode.
    pub(crate) fn response(&self, index: usize, lambda: f64, kept: usize) -> f64 {
        match self.mode {
            FilterMode::Ideal => {
                if index < kept {
                    1.0
                } else {
                    0.0
                }
            }
            FilterMode::Sigmoid => sigmoid(self.alpha * (self.omega - lambda)),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of `sigmoid(alpha * (omega - lambda))` with respect to `omega`.
pub fn sigmoid_response_domega(alpha: f64, omega: f64, lambda: f64) -> f64 {
    let s = sigmoid(alpha * (omega - lambda));
    alpha * s * (1.0 - s)
}

/// Exact spectral low-pass filter of a single graph signal.
pub fn lp_filter_exact(l: &Laplacian, y: ArrayView1<f64>, spec: &FilterSpec) -> Result<Array1<f64>> {
    if y.len() != l.n() {
        return Err(Error::DimensionMismatch { expected: l.n(), actual: y.len() });
    }
    let eig = eigh(l)?;
    let out = apply_spectral_filter(&eig, y.insert_axis(Axis(1)), spec)?;
    Ok(out.column(0).to_owned())
}

/// `V g(Lambda) V^T Y` for every column of `Y`, given a precomputed
/// eigendecomposition.
pub fn apply_spectral_filter(eig: &EigenPair, y: ArrayView2<f64>, spec: &FilterSpec) -> Result<Array2<f64>> {
    let n = eig.values.len();
    if y.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.nrows() });
    }
    spec.validate(n)?;
    let kept = spec.omega as usize;
    let g: Array1<f64> = eig
        .values
        .iter()
        .enumerate()
        .map(|(k, &lam)| spec.response(k, lam, kept))
        .collect();
    let mut coeffs = eig.vectors.t().dot(&y);
    for (mut row, gk) in coeffs.rows_mut().into_iter().zip(g.iter()) {
        row *= *gk;
    }
    Ok(eig.vectors.dot(&coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_laplacian, LaplacianKind, SignedGraph};
    use ndarray::array;

    fn path4() -> Laplacian {
        let g = SignedGraph::new(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5)]).unwrap();
        build_laplacian(&g, LaplacianKind::Combinatorial)
    }

    #[test]
    fn all_pass_returns_input() {
        let y = array![1.0, -2.0, 0.5, 4.0];
        let out = lp_filter_exact(&path4(), y.view(), &FilterSpec::ideal(4)).unwrap();
        for (a, b) in out.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_projection_is_mean() {
        let y = array![1.0, -2.0, 0.5, 4.0];
        let out = lp_filter_exact(&path4(), y.view(), &FilterSpec::ideal(1)).unwrap();
        let mean = y.mean().unwrap();
        for a in out.iter() {
            assert!((a - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_at_cutoff_halves_component() {
        let l = path4();
        let eig = eigh(&l).unwrap();
        let lam = eig.values[2];
        let v = eig.vectors.column(2).to_owned();
        let out = lp_filter_exact(&l, v.view(), &FilterSpec::sigmoid(lam)).unwrap();
        for (a, b) in out.iter().zip(v.iter()) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(FilterSpec::ideal(0).validate(4).is_err());
        assert!(FilterSpec::ideal(5).validate(4).is_err());
        let mut s = FilterSpec::ideal(2);
        s.omega = 1.5;
        assert!(s.validate(4).is_err());
        assert!(FilterSpec::sigmoid(f64::NAN).validate(4).is_err());
        assert!(FilterSpec::sigmoid(0.2).with_backend(Backend::Lanczos { m: 5 }).validate(4).is_err());
        assert!(FilterSpec::sigmoid(0.2).with_backend(Backend::Lanczos { m: 4 }).validate(4).is_ok());
    }

    #[test]
    fn sigmoid_is_stable_and_monotone() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let mut prev = 1.0;
        for k in 0..100 {
            let lam = k as f64 * 0.05;
            let g = sigmoid(10.0 * (1.0 - lam));
            assert!(g > 0.0 && g < 1.0 && g < prev);
            prev = g;
        }
    }
}
