//! Unrolled denoiser: stacked balanced-graph-learning (BGL) and low-pass
//! filter (LPF) blocks.
//!
//! Each block turns the current per-node time series into features, then
//! into Mahalanobis distances, signed edge weights on a fixed topology,
//! normalised weights and a positive-graph Laplacian; the block's filter is
//! applied in the polarity-transformed domain and mapped back.

mod features;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use features::{adaptive_avg_pool, extract_features, ConvLayer, FeatureExtractorParams, BN_EPS, LEAKY_SLOPE};

use crate::balance::{assign_weights, FeatureDistanceField, WeightScheme};
use crate::error::{Error, Result};
use crate::graph::{
    build_laplacian, gct_shift, normalize_weights, similarity_transform, Laplacian, LaplacianKind, PolarityVector,
    SignedGraph,
};
use crate::spectral::{apply_spectral_filter, eigh, lp_filter_lanczos, Backend, EigenPair, FilterSpec};

pub const MODEL_FORMAT: &str = "balgraph-model/1";

/// Metric `M = Q Q^T` for the feature distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFactor {
    pub q: Array2<f64>,
}

impl MetricFactor {
    pub fn identity(k: usize) -> Self {
        MetricFactor { q: Array2::eye(k) }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let (rows, rank) = self.q.dim();
        if rows != k || rank == 0 || rank > k {
            return Err(Error::InvalidModel(format!(
                "metric factor is {rows}x{rank}, expected {k} rows and 1..={k} columns"
            )));
        }
        if !self.q.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite metric factor".into()));
        }
        Ok(())
    }
}

/// Raw squared Mahalanobis distances `||Q^T (f_i - f_j)||^2` between the
/// rows of `f`.
pub fn raw_mahalanobis(f: ArrayView2<f64>, q: &MetricFactor) -> Array2<f64> {
    let p = f.dot(&q.q);
    let n = p.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = p.row(i).iter().zip(p.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Mahalanobis distances min-max normalised to `[0, 1]` over the
/// off-diagonal entries; a constant field maps to zero.
pub fn mahalanobis_distances(f: ArrayView2<f64>, q: &MetricFactor) -> Result<FeatureDistanceField> {
    let mut d = raw_mahalanobis(f, q);
    let n = d.nrows();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            lo = lo.min(d[[i, j]]);
            hi = hi.max(d[[i, j]]);
        }
    }
    let range = hi - lo;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[[i, j]] = if range > 0.0 { (d[[i, j]] - lo) / range } else { 0.0 };
            }
        }
    }
    FeatureDistanceField::new(d)
}

/// How a block turns distances into a graph and a filtering operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphKind {
    /// Polarity-signed weights, combinatorial Laplacian, Gershgorin shift
    /// and similarity transform to a positive graph.
    BalancedSigned,
    /// `exp(-d)` weights on a positive graph.
    Positive,
    /// Shifted-logistic signed weights without balance, filtered on the
    /// signed Laplacian.
    UnbalancedLogistic { d_star: f64 },
}

impl GraphKind {
    pub fn scheme(&self) -> WeightScheme {
        match *self {
            GraphKind::BalancedSigned => WeightScheme::BalancedCht,
            GraphKind::Positive => WeightScheme::PositiveOnly,
            GraphKind::UnbalancedLogistic { d_star } => WeightScheme::LogisticUnbalanced { d_star },
        }
    }

    pub fn uses_polarity(&self) -> bool {
        matches!(self, GraphKind::BalancedSigned)
    }
}

/// Chunking metadata: `n_channels * n_chunks` nodes, `chunk_len` samples
/// per node embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunking {
    pub n_channels: usize,
    pub n_chunks: usize,
    pub chunk_len: usize,
}

impl Chunking {
    pub fn n_nodes(&self) -> usize {
        self.n_channels * self.n_chunks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub features: FeatureExtractorParams,
    pub metric: MetricFactor,
    pub filter: FilterSpec,
    /// Polarities used by this block (all ones unless the graph kind is
    /// balanced-signed).
    pub beta: PolarityVector,
}

impl Block {
    pub fn n_shape_params(&self) -> usize {
        self.features.n_params() + self.metric.q.len()
    }

    pub fn shape_params(&self) -> Vec<f64> {
        let mut v = self.features.flat_params();
        v.extend(self.metric.q.iter());
        v
    }

    pub fn set_shape_params(&mut self, src: &[f64]) -> usize {
        let mut pos = self.features.set_flat_params(src);
        for q in self.metric.q.iter_mut() {
            *q = src[pos];
            pos += 1;
        }
        pos
    }
}

/// Network shape used to initialise a [`DenoiserModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub n_blocks: usize,
    pub conv_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub feature_dim: usize,
    /// Columns of each metric factor; `None` means full rank.
    pub metric_rank: Option<usize>,
    pub filter: FilterSpec,
    pub graph: GraphKind,
    pub polarity_sweeps: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            n_blocks: 3,
            conv_layers: 3,
            channels: 4,
            kernel: 5,
            stride: 2,
            feature_dim: 63,
            metric_rank: None,
            filter: FilterSpec::sigmoid(0.5),
            graph: GraphKind::BalancedSigned,
            polarity_sweeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct DenoiserModel {
    format: String,
    pub graph: GraphKind,
    pub blocks: Vec<Block>,
    pub topology: SignedGraph,
    pub chunking: Chunking,
    /// Polarity sweeps per block and training epoch.
    pub polarity_sweeps: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    format: String,
    graph: GraphKind,
    blocks: Vec<Block>,
    topology: SignedGraph,
    chunking: Chunking,
    polarity_sweeps: usize,
}

impl TryFrom<RawModel> for DenoiserModel {
    type Error = Error;

    fn try_from(r: RawModel) -> Result<Self> {
        if r.format != MODEL_FORMAT {
            return Err(Error::InvalidModel(format!(
                "unsupported model format '{}', expected '{MODEL_FORMAT}'",
                r.format
            )));
        }
        let m = DenoiserModel {
            format: r.format,
            graph: r.graph,
            blocks: r.blocks,
            topology: r.topology,
            chunking: r.chunking,
            polarity_sweeps: r.polarity_sweeps,
        };
        m.validate()?;
        Ok(m)
    }
}

impl DenoiserModel {
    pub fn new(
        arch: &Architecture,
        topology: SignedGraph,
        chunking: Chunking,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n = topology.n_nodes();
        let rank = arch.metric_rank.unwrap_or(arch.feature_dim);
        let mut blocks = Vec::with_capacity(arch.n_blocks);
        for _ in 0..arch.n_blocks {
            let features = FeatureExtractorParams::new(
                chunking.chunk_len,
                arch.conv_layers,
                arch.channels,
                arch.kernel,
                arch.stride,
                arch.feature_dim,
                rng,
            )?;
            let mut q = Array2::zeros((arch.feature_dim, rank));
            for k in 0..rank.min(arch.feature_dim) {
                q[[k, k]] = 1.0;
            }
            blocks.push(Block {
                features,
                metric: MetricFactor { q },
                filter: arch.filter,
                beta: PolarityVector::ones(n),
            });
        }
        let m = DenoiserModel {
            format: MODEL_FORMAT.to_string(),
            graph: arch.graph,
            blocks,
            topology,
            chunking,
            polarity_sweeps: arch.polarity_sweeps,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.topology.n_nodes();
        if self.blocks.is_empty() {
            return Err(Error::InvalidModel("a model needs at least one block".into()));
        }
        if self.chunking.n_nodes() != n {
            return Err(Error::InvalidModel(format!(
                "chunking gives {} nodes but the topology has {n}",
                self.chunking.n_nodes()
            )));
        }
        self.graph.scheme().validate()?;
        for (t, b) in self.blocks.iter().enumerate() {
            b.features.validate()?;
            if b.features.input_len != self.chunking.chunk_len {
                return Err(Error::InvalidModel(format!("block {t} expects embeddings of a different length")));
            }
            b.metric.validate(b.features.out_dim)?;
            b.filter.validate(n)?;
            if b.beta.len() != n {
                return Err(Error::InvalidModel(format!("block {t} polarity has the wrong length")));
            }
            if !self.graph.uses_polarity() && b.beta != PolarityVector::ones(n) {
                return Err(Error::InvalidModel(format!("block {t} carries polarities for an unsigned graph kind")));
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    pub fn embedding_len(&self) -> usize {
        self.chunking.chunk_len
    }

    pub fn n_shape_params(&self) -> usize {
        self.blocks.iter().map(Block::n_shape_params).sum()
    }

    pub fn shape_params(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(Block::shape_params).collect()
    }

    pub fn set_shape_params(&mut self, src: &[f64]) {
        let mut pos = 0;
        for b in &mut self.blocks {
            pos += b.set_shape_params(&src[pos..]);
        }
        debug_assert_eq!(pos, src.len());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    fn check_signal(&self, y: ArrayView2<f64>) -> Result<()> {
        if y.nrows() != self.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_nodes(),
                actual: y.nrows(),
            });
        }
        if y.ncols() != self.embedding_len() {
            return Err(Error::DimensionMismatch {
                expected: self.embedding_len(),
                actual: y.ncols(),
            });
        }
        Ok(())
    }
}

/// Graph learned by one block for one input.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    /// Normalised edge weights (signed for the signed graph kinds).
    pub weights: SignedGraph,
    /// Operator whose low frequencies the block keeps: the positive-graph
    /// Laplacian after the similarity transform for balanced graphs.
    pub laplacian: Laplacian,
    pub beta: PolarityVector,
    pub delta: f64,
}

/// Signed, unnormalised weights of block `t` for the embeddings `emb` under
/// polarities `beta`.
pub fn block_weights(
    model: &DenoiserModel,
    block: &Block,
    beta: &PolarityVector,
    emb: ArrayView2<f64>,
) -> Result<SignedGraph> {
    let f = extract_features(&block.features, emb)?;
    let d = mahalanobis_distances(f.view(), &block.metric)?;
    assign_weights(&d, beta, model.graph.scheme(), &model.topology)
}

/// The BGL stage of one block with the block's stored polarities.
pub fn bgl_block(model: &DenoiserModel, block: &Block, emb: ArrayView2<f64>) -> Result<BlockGraph> {
    let raw = block_weights(model, block, &block.beta, emb)?;
    graph_operator(model.graph, raw, &block.beta)
}

/// Normalisation, Laplacian, Gershgorin shift and (for balanced graphs)
/// the similarity transform.
pub fn graph_operator(kind: GraphKind, raw: SignedGraph, beta: &PolarityVector) -> Result<BlockGraph> {
    let weights = normalize_weights(&raw)?;
    let lap_kind = match kind {
        GraphKind::UnbalancedLogistic { .. } => LaplacianKind::Signed,
        _ => LaplacianKind::Combinatorial,
    };
    let (shifted, delta) = gct_shift(&build_laplacian(&weights, lap_kind));
    let (laplacian, beta) = if kind.uses_polarity() {
        (similarity_transform(&shifted, beta)?, beta.clone())
    } else {
        (shifted, PolarityVector::ones(weights.n_nodes()))
    };
    Ok(BlockGraph {
        weights,
        laplacian,
        beta,
        delta,
    })
}

/// Intermediate quantities of one block, kept for gradient computation.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub beta: Array1<f64>,
    pub eig: EigenPair,
    /// Block input in the original (untransformed) domain.
    pub input: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub blocks: Vec<BlockTrace>,
    pub output: Array2<f64>,
}

fn flip_rows(beta: &Array1<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for (mut row, &b) in out.rows_mut().into_iter().zip(beta.iter()) {
        if b < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
    out
}

fn filter_block(g: &BlockGraph, spec: &FilterSpec, y_plus: &Array2<f64>) -> Result<(Array2<f64>, Option<EigenPair>)> {
    match spec.backend {
        Backend::Exact => {
            let eig = eigh(&g.laplacian)?;
            let x = apply_spectral_filter(&eig, y_plus.view(), spec)?;
            Ok((x, Some(eig)))
        }
        Backend::Lanczos { .. } => {
            let mut x = Array2::zeros(y_plus.dim());
            for (c, col) in y_plus.columns().into_iter().enumerate() {
                let out = lp_filter_lanczos(&g.laplacian, col, spec)?;
                x.column_mut(c).assign(&out);
            }
            Ok((x, None))
        }
    }
}

/// Runs the unrolled network on one signal (`n_nodes x embedding_len`).
pub fn denoise(model: &DenoiserModel, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    model.check_signal(y)?;
    let mut x = y.to_owned();
    for block in &model.blocks {
        x = block_forward(model, block, x.view())?;
    }
    Ok(x)
}

/// One block of the network: graph learning followed by the low-pass
/// filter.
pub fn block_forward(model: &DenoiserModel, block: &Block, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    model.check_signal(x)?;
    let g = bgl_block(model, block, x)?;
    let beta = g.beta.to_array();
    let (x_plus, _) = filter_block(&g, &block.filter, &flip_rows(&beta, &x.to_owned()))?;
    Ok(flip_rows(&beta, &x_plus))
}

/// Forward pass with the exact backend that records each block's
/// polarities, eigendecomposition and input.
pub fn denoise_trace(model: &DenoiserModel, y: ArrayView2<f64>) -> Result<Trace> {
    model.check_signal(y)?;
    let mut x = y.to_owned();
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for block in &model.blocks {
        let g = bgl_block(model, block, x.view())?;
        let beta = g.beta.to_array();
        let eig = eigh(&g.laplacian)?;
        let x_plus = apply_spectral_filter(&eig, flip_rows(&beta, &x).view(), &block.filter)?;
        let next = flip_rows(&beta, &x_plus);
        blocks.push(BlockTrace { beta, eig, input: x });
        x = next;
    }
    Ok(Trace { blocks, output: x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(graph: GraphKind) -> DenoiserModel {
        let topo = SignedGraph::new(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)]).unwrap();
        let arch = Architecture {
            n_blocks: 2,
            conv_layers: 1,
            channels: 2,
            kernel: 3,
            stride: 1,
            feature_dim: 4,
            graph,
            filter: FilterSpec::sigmoid(0.8),
            ..Architecture::default()
        };
        let chunking = Chunking {
            n_channels: 4,
            n_chunks: 1,
            chunk_len: 8,
        };
        DenoiserModel::new(&arch, topo, chunking, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn raw_distance_is_quadratic_form() {
        let f = array![[0.0, 0.0], [3.0, 4.0]];
        let d = raw_mahalanobis(f.view(), &MetricFactor::identity(2));
        assert_eq!(d[[0, 1]], 25.0);
        let q = MetricFactor { q: array![[2.0], [0.0]] };
        assert_eq!(raw_mahalanobis(f.view(), &q)[[0, 1]], 36.0);
    }

    #[test]
    fn constant_distances_normalise_to_zero() {
        let f = array![[1.0], [1.0], [1.0]];
        let d = mahalanobis_distances(f.view(), &MetricFactor::identity(1)).unwrap();
        assert!(d.matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn json_round_trip_and_format_tag() {
        let m = small_model(GraphKind::BalancedSigned);
        let back = DenoiserModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = m.to_json().unwrap().replace(MODEL_FORMAT, "other/9");
        assert!(DenoiserModel::from_json(&bad).is_err());
    }

    #[test]
    fn shape_params_round_trip() {
        let m = small_model(GraphKind::Positive);
        let p = m.shape_params();
        assert_eq!(p.len(), m.n_shape_params());
        let mut m2 = small_model(GraphKind::Positive);
        m2.set_shape_params(&p.iter().map(|v| v + 1.0).collect::<Vec<_>>());
        m2.set_shape_params(&p);
        assert_eq!(m, m2);
    }

    #[test]
    fn denoise_rejects_wrong_shapes() {
        let m = small_model(GraphKind::BalancedSigned);
        assert!(denoise(&m, Array2::zeros((3, 8)).view()).is_err());
        assert!(denoise(&m, Array2::zeros((4, 7)).view()).is_err());
    }

    #[test]
    fn trace_matches_denoise() {
        for kind in [
            GraphKind::BalancedSigned,
            GraphKind::Positive,
            GraphKind::UnbalancedLogistic { d_star: 0.5 },
        ] {
            let mut m = small_model(kind);
            if kind.uses_polarity() {
                m.blocks[0].beta = PolarityVector::new(vec![1, -1, 1, -1]).unwrap();
            }
            let y = Array2::from_shape_fn((4, 8), |(i, t)| ((i * 5 + t * 3) % 7) as f64 - 3.0);
            let a = denoise(&m, y.view()).unwrap();
            let b = denoise_trace(&m, y.view()).unwrap();
            assert_eq!(a, b.output);
            assert_eq!(b.blocks.len(), 2);
        }
    }
}
