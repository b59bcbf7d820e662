//! Two-class synthetic generator with known ground truth.
//!
//! Both classes share a random connected topology (ring plus chords). Each
//! class gets its own edge magnitudes and node polarities, i.e. its own
//! balanced signed graph. A class-`c` sample is `T_c V_c[:, :omega_c] Z`,
//! where `V_c` are the eigenvectors of the class's positive-graph Laplacian
//! and `Z` is Gaussian (optionally AR(1) in time), scaled to unit Frobenius norm, plus white noise at
//! the requested SNR.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Sample};
use crate::error::{Error, Result};
use crate::graph::{build_laplacian, LaplacianKind, PolarityVector, SignedGraph};
use crate::spectral::eigh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_nodes: usize,
    /// Random chords added to the ring.
    pub n_chords: usize,
    pub n_samples: usize,
    /// Samples per node time series.
    pub time_len: usize,
    /// Subspace dimension per class.
    pub omega: [usize; 2],
    /// Probability that a node gets polarity -1 (anti-correlated with the
    /// anchor node 0).
    pub negative_fraction: f64,
    /// Range of edge magnitudes.
    pub weight_range: [f64; 2],
    /// Signal-to-noise ratio in dB; `null` for noiseless samples.
    pub snr_db: Option<f64>,
    pub n_subjects: usize,
    pub sample_rate: f64,
    /// AR(1) coefficient of the latent time series of each class; 0 gives
    /// white latents.
    pub temporal_ar: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_nodes: 30,
            n_chords: 30,
            n_samples: 400,
            time_len: 32,
            omega: [6, 6],
            negative_fraction: 0.5,
            weight_range: [0.5, 1.5],
            snr_db: Some(10.0),
            n_subjects: 10,
            sample_rate: 128.0,
            temporal_ar: [0.0, 0.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if n < 3 {
            return bad(format!("n_nodes must be at least 3, got {n}"));
        }
        if self.n_chords > n * (n - 1) / 2 - n {
            return bad(format!("n_chords {} exceeds the available node pairs", self.n_chords));
        }
        if self.omega.iter().any(|&w| w == 0 || w > n) {
            return bad(format!("omega {:?} must lie in [1, {n}]", self.omega));
        }
        if self.n_samples < 2 || self.time_len == 0 || self.n_subjects == 0 {
            return bad("n_samples >= 2, time_len >= 1 and n_subjects >= 1 are required".into());
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return bad(format!("negative_fraction must be in [0, 1], got {}", self.negative_fraction));
        }
        let [lo, hi] = self.weight_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("weight_range must satisfy 0 < lo <= hi, got {:?}", self.weight_range));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad("snr_db must be finite (use null for noiseless samples)".into());
            }
        }
        if self.temporal_ar.iter().any(|a| !(a.abs() < 1.0)) {
            return bad(format!("temporal_ar entries must lie in (-1, 1), got {:?}", self.temporal_ar));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad("sample_rate must be positive".into());
        }
        Ok(())
    }

    /// Per-entry noise standard deviation for unit-energy signals.
    pub fn noise_sigma(&self) -> f64 {
        match self.snr_db {
            Some(snr) => (10f64.powf(-snr / 10.0) / (self.n_nodes * self.time_len) as f64).sqrt(),
            None => 0.0,
        }
    }
}

/// Ground truth behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub topology: SignedGraph,
    /// Balanced signed graph of each class.
    pub graphs: [SignedGraph; 2],
    pub betas: [PolarityVector; 2],
    /// Orthonormal basis (columns) of each class's signal subspace, in the
    /// original signed domain.
    pub subspaces: [Array2<f64>; 2],
}

const STREAM_GRAPH: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn random_topology(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SignedGraph> {
    let n = cfg.n_nodes;
    let mut pairs: std::collections::BTreeSet<(usize, usize)> = (0..n).map(|i| {
        let j = (i + 1) % n;
        (i.min(j), i.max(j))
    })
    .collect();
    let target = pairs.len() + cfg.n_chords;
    while pairs.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    SignedGraph::new(n, pairs.into_iter().map(|(i, j)| (i, j, 1.0)))
}

fn random_polarity(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> PolarityVector {
    let beta = (0..cfg.n_nodes)
        .map(|i| {
            if i > 0 && rng.random_bool(cfg.negative_fraction) {
                -1
            } else {
                1
            }
        })
        .collect();
    PolarityVector::new(beta).expect("entries are +-1")
}

pub fn synth_two_class(cfg: &SynthConfig, seed: u64) -> Result<(LabeledDataset, SynthTruth)> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let mut grng = stream(seed, STREAM_GRAPH);
    let topology = random_topology(cfg, &mut grng)?;
    let beta0 = random_polarity(cfg, &mut grng);
    let mut beta1 = random_polarity(cfg, &mut grng);
    let mut attempts = 0;
    while cfg.negative_fraction > 0.0 && beta1.hamming_up_to_sign(&beta0) == 0 && attempts < 100 {
        beta1 = random_polarity(cfg, &mut grng);
        attempts += 1;
    }
    let betas = [beta0, beta1];
    let [lo, hi] = cfg.weight_range;
    let mut graphs = Vec::with_capacity(2);
    let mut subspaces = Vec::with_capacity(2);
    for (c, beta) in betas.iter().enumerate() {
        let b = beta.as_slice();
        let signed = topology.map_weights(|e| {
            let mag = if hi > lo { grng.random_range(lo..hi) } else { lo };
            f64::from(b[e.i] * b[e.j]) * mag
        })?;
        let eig = eigh(&build_laplacian(&signed.abs(), LaplacianKind::Combinatorial))?;
        let mut basis = eig.vectors.slice(s![.., ..cfg.omega[c]]).to_owned();
        for (mut row, &bi) in basis.rows_mut().into_iter().zip(b) {
            row *= f64::from(bi);
        }
        graphs.push(signed);
        subspaces.push(basis);
    }
    let graphs: [SignedGraph; 2] = graphs.try_into().expect("two classes");
    let subspaces: [Array2<f64>; 2] = subspaces.try_into().expect("two classes");

    let mut srng = stream(seed, STREAM_SIGNAL);
    let mut nrng = stream(seed, STREAM_NOISE);
    let sigma = cfg.noise_sigma();
    let samples = (0..cfg.n_samples)
        .map(|k| {
            let label = (k % 2) as u8;
            let basis = &subspaces[label as usize];
            let a = cfg.temporal_ar[label as usize];
            let mut z: Array2<f64> = Array2::from_shape_fn((basis.ncols(), cfg.time_len), |_| {
                StandardNormal.sample(&mut srng)
            });
            if a != 0.0 {
                let innov = (1.0 - a * a).sqrt();
                for mut row in z.rows_mut() {
                    for t in 1..row.len() {
                        row[t] = a * row[t - 1] + innov * row[t];
                    }
                }
            }
            let mut x: Array2<f64> = basis.dot(&z);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x /= norm;
            if sigma > 0.0 {
                x.mapv_inplace(|v| {
                    let e: f64 = StandardNormal.sample(&mut nrng);
                    v + sigma * e
                });
            }
            Sample {
                signal: x,
                label,
                subject: (k / 2) % cfg.n_subjects,
            }
        })
        .collect();
    let ds = LabeledDataset {
        samples,
        sample_rate: cfg.sample_rate,
        channel_names: (0..n).map(|i| format!("ch{i}")).collect(),
    };
    ds.validate()?;
    Ok((
        ds,
        SynthTruth {
            topology,
            graphs,
            betas,
            subspaces,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::is_balanced;

    #[test]
    fn classes_are_balanced_and_distinct() {
        let (ds, truth) = synth_two_class(&SynthConfig::default(), 7).unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(truth.topology.n_components(), 1);
        for g in &truth.graphs {
            assert!(is_balanced(g).is_balanced());
        }
        assert!(truth.betas[0].hamming_up_to_sign(&truth.betas[1]) > 0);
        assert_eq!(ds.samples.iter().filter(|s| s.label == 1).count(), 200);
        assert_eq!(ds.subjects(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn unit_energy_before_noise() {
        let cfg = SynthConfig {
            snr_db: None,
            n_samples: 6,
            ..SynthConfig::default()
        };
        let (ds, _) = synth_two_class(&cfg, 1).unwrap();
        for s in &ds.samples {
            let e: f64 = s.signal.iter().map(|v| v * v).sum();
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig {
            omega: [0, 3],
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            snr_db: Some(f64::INFINITY),
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
