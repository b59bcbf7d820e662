//! Shallow per-node 1-D CNN: `(conv -> batch norm -> leaky ReLU)` blocks, a
//! 1x1 projection to a single channel and adaptive average pooling to `K`
//! outputs.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `out_channels x in_channels x kernel`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        let weight = (0..out_channels * in_channels * kernel)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..out_channels).map(|_| rng.random_range(-bound..bound)).collect();
        ConvLayer {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias,
            bn_scale: vec![1.0; out_channels],
            bn_shift: vec![0.0; out_channels],
            running_mean: vec![0.0; out_channels],
            running_var: vec![1.0; out_channels],
        }
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        if len < self.kernel || self.stride == 0 {
            None
        } else {
            Some((len - self.kernel) / self.stride + 1)
        }
    }

    /// Convolution plus bias, before normalisation. `x` is
    /// `in_channels x len`.
    fn convolve(&self, x: &Array2<f64>) -> Array2<f64> {
        let len = x.ncols();
        let out_len = self.output_len(len).expect("length checked at validation");
        let mut out = Array2::zeros((self.out_channels, out_len));
        for o in 0..self.out_channels {
            for t in 0..out_len {
                let start = t * self.stride;
                let mut acc = self.bias[o];
                for c in 0..self.in_channels {
                    let w = &self.weight[(o * self.in_channels + c) * self.kernel..][..self.kernel];
                    let row = x.row(c);
                    for (k, wk) in w.iter().enumerate() {
                        acc += wk * row[start + k];
                    }
                }
                out[[o, t]] = acc;
            }
        }
        out
    }

    fn normalize_activate(&self, z: &mut Array2<f64>) {
        for (o, mut row) in z.rows_mut().into_iter().enumerate() {
            let inv = self.bn_scale[o] / (self.running_var[o] + BN_EPS).sqrt();
            let (mean, shift) = (self.running_mean[o], self.bn_shift[o]);
            row.mapv_inplace(|v| leaky_relu((v - mean) * inv + shift));
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = self.convolve(x);
        self.normalize_activate(&mut z);
        z
    }
}

fn leaky_relu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorParams {
    pub input_len: usize,
    pub layers: Vec<ConvLayer>,
    pub proj_weight: Vec<f64>,
    pub proj_bias: f64,
    pub out_dim: usize,
}

impl FeatureExtractorParams {
    pub fn new(
        input_len: usize,
        n_layers: usize,
        channels: usize,
        kernel: usize,
        stride: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(n_layers);
        let mut in_ch = 1;
        for _ in 0..n_layers {
            layers.push(ConvLayer::new(in_ch, channels, kernel, stride, rng));
            in_ch = channels;
        }
        let bound = 1.0 / (in_ch as f64).sqrt();
        let proj_weight = (0..in_ch).map(|_| rng.random_range(-bound..bound)).collect();
        let proj_bias = rng.random_range(-bound..bound);
        let p = FeatureExtractorParams {
            input_len,
            layers,
            proj_weight,
            proj_bias,
            out_dim,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 || self.out_dim >= self.input_len {
            return Err(Error::InvalidModel(format!(
                "feature dimension {} must be in [1, {})",
                self.out_dim, self.input_len
            )));
        }
        let mut len = self.input_len;
        let mut ch = 1;
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.in_channels != ch {
                return Err(Error::InvalidModel(format!("conv layer {k} expects {} channels, gets {ch}", layer.in_channels)));
            }
            let n_w = layer.out_channels * layer.in_channels * layer.kernel;
            let oc = layer.out_channels;
            if layer.weight.len() != n_w
                || layer.bias.len() != oc
                || layer.bn_scale.len() != oc
                || layer.bn_shift.len() != oc
                || layer.running_mean.len() != oc
                || layer.running_var.len() != oc
            {
                return Err(Error::InvalidModel(format!("conv layer {k} has inconsistent parameter shapes")));
            }
            if layer.running_var.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidModel(format!("conv layer {k} has a negative running variance")));
            }
            len = layer.output_len(len).ok_or_else(|| {
                Error::InvalidModel(format!("conv layer {k} (kernel {}) receives only {len} samples", layer.kernel))
            })?;
            ch = layer.out_channels;
        }
        if self.proj_weight.len() != ch {
            return Err(Error::InvalidModel("projection width does not match the last conv layer".into()));
        }
        if !self.flat_params().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite feature extractor parameter".into()));
        }
        Ok(())
    }

    fn project(&self, z: &Array2<f64>) -> Vec<f64> {
        (0..z.ncols())
            .map(|t| {
                self.proj_bias
                    + self
                        .proj_weight
                        .iter()
                        .zip(z.column(t).iter())
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Features of one node embedding.
    pub fn node_features(&self, e: ArrayView1<f64>) -> Vec<f64> {
        let mut z = e.to_owned().insert_axis(ndarray::Axis(0));
        for layer in &self.layers {
            z = layer.forward(&z);
        }
        adaptive_avg_pool(&self.project(&z), self.out_dim)
    }

    /// Running batch-norm statistics are replaced by the batch statistics of
    /// `embeddings` (every row of every matrix is one node embedding),
    /// layer by layer.
    pub fn calibrate<'a>(&mut self, embeddings: impl IntoIterator<Item = ArrayView2<'a, f64>> + Clone) {
        for li in 0..self.layers.len() {
            let oc = self.layers[li].out_channels;
            let mut sum = vec![0.0; oc];
            let mut sq = vec![0.0; oc];
            let mut count = 0usize;
            for emb in embeddings.clone() {
                for e in emb.rows() {
                    let mut z = e.to_owned().insert_axis(ndarray::Axis(0));
                    for layer in &self.layers[..li] {
                        z = layer.forward(&z);
                    }
                    let pre = self.layers[li].convolve(&z);
                    for (o, row) in pre.rows().into_iter().enumerate() {
                        for &v in row {
                            sum[o] += v;
                            sq[o] += v * v;
                        }
                    }
                    count += pre.ncols();
                }
            }
            if count == 0 {
                return;
            }
            let layer = &mut self.layers[li];
            for o in 0..oc {
                let mean = sum[o] / count as f64;
                layer.running_mean[o] = mean;
                layer.running_var[o] = (sq[o] / count as f64 - mean * mean).max(0.0);
            }
        }
    }

    /// Trainable parameters in a fixed order (running statistics excluded).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
            out.extend_from_slice(&l.bn_scale);
            out.extend_from_slice(&l.bn_shift);
        }
        out.extend_from_slice(&self.proj_weight);
        out.push(self.proj_bias);
        out
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + 3 * l.out_channels)
            .sum::<usize>()
            + self.proj_weight.len()
            + 1
    }

    /// Inverse of [`flat_params`](Self::flat_params); returns the number of
    /// values consumed.
    pub fn set_flat_params(&mut self, src: &[f64]) -> usize {
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&src[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for l in &mut self.layers {
            take(&mut l.weight);
            take(&mut l.bias);
            take(&mut l.bn_scale);
            take(&mut l.bn_shift);
        }
        take(&mut self.proj_weight);
        let mut b = [0.0];
        take(&mut b);
        self.proj_bias = b[0];
        pos
    }
}

/// Adaptive average pooling with the usual window rule
/// `[floor(i L / K), ceil((i + 1) L / K))`.
pub fn adaptive_avg_pool(x: &[f64], k: usize) -> Vec<f64> {
    let len = x.len();
    (0..k)
        .map(|i| {
            let start = i * len / k;
            let end = ((i + 1) * len).div_ceil(k);
            x[start..end].iter().sum::<f64>() / (end - start) as f64
        })
        .collect()
}

/// Per-node features, one row per node.
pub fn extract_features(params: &FeatureExtractorParams, embeddings: ArrayView2<f64>) -> Result<Array2<f64>> {
    if embeddings.ncols() != params.input_len {
        return Err(Error::DimensionMismatch {
            expected: params.input_len,
            actual: embeddings.ncols(),
        });
    }
    let n = embeddings.nrows();
    let mut out = Array2::zeros((n, params.out_dim));
    for (i, e) in embeddings.rows().into_iter().enumerate() {
        for (k, v) in params.node_features(e).into_iter().enumerate() {
            out[[i, k]] = v;
        }
    }
    Ok(out)
}
