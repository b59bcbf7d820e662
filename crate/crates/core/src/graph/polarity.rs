use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-node polarity in {-1, +1}. Doubles as the diagonal of the
/// similarity transform `T = diag(beta)`, which is its own inverse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct PolarityVector(Vec<i8>);

impl TryFrom<Vec<i8>> for PolarityVector {
    type Error = Error;

    fn try_from(v: Vec<i8>) -> Result<Self> {
        PolarityVector::new(v)
    }
}

impl From<PolarityVector> for Vec<i8> {
    fn from(p: PolarityVector) -> Self {
        p.0
    }
}

impl PolarityVector {
    pub fn new(beta: Vec<i8>) -> Result<Self> {
        if let Some(b) = beta.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::InvalidGraph(format!("polarity must be +1 or -1, got {b}")));
        }
        Ok(PolarityVector(beta))
    }

    pub fn ones(n: usize) -> Self {
        PolarityVector(vec![1; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        f64::from(self.0[i])
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn to_array(&self) -> Array1<f64> {
        self.0.iter().map(|&b| f64::from(b)).collect()
    }

    /// Applies `T` to the rows of a node-by-column signal matrix.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (mut row, &b) in out.rows_mut().into_iter().zip(&self.0) {
            if b < 0 {
                row.mapv_inplace(|v| -v);
            }
        }
        out
    }

    /// Number of nodes whose polarity differs, up to a global sign flip.
    pub fn hamming_up_to_sign(&self, other: &PolarityVector) -> usize {
        let d = self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count();
        d.min(self.len() - d)
    }
}
