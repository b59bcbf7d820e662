//! End-to-end steps shared by the commands: chunking a dataset onto its
//! node topology, training a denoiser pair and scoring it.

use ndarray::Array2;
use rayon::prelude::*;

use super::config::{RunConfig, TopologyConfig};
use crate::classify::{ClassifierPair, MetricsReport, Prediction};
use crate::data::{build_line_graph, build_product_graph, chunk, ChunkSpec, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::graph::SignedGraph;
use crate::train::{init_denoiser, train_denoiser, TrainData, TrainOutcome};
use crate::unrolled::{Chunking, DenoiserModel};

/// A dataset mapped onto node embeddings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub chunking: Chunking,
    /// Node topology (product graph over chunks).
    pub topology: SignedGraph,
    /// One `n_nodes x chunk_len` embedding matrix per sample.
    pub signals: Vec<Array2<f64>>,
    pub labels: Vec<u8>,
    pub subjects: Vec<usize>,
}

impl Prepared {
    fn select(&self, idx: &[usize], class: u8) -> Vec<Array2<f64>> {
        idx.iter()
            .filter(|&&k| self.labels[k] == class)
            .map(|&k| self.signals[k].clone())
            .collect()
    }

    /// Training and validation data for the class-`class` denoiser.
    pub fn train_data(&self, split: &Split, class: u8) -> TrainData {
        TrainData {
            train_own: self.select(&split.train, class),
            train_other: self.select(&split.train, 1 - class),
            val_own: self.select(&split.val, class),
            val_other: self.select(&split.val, 1 - class),
        }
    }
}

/// Channel graph from the primary graph: the graph itself, or its line
/// graph when channels are bipolar pairs.
pub fn channel_graph(primary: &SignedGraph, cfg: &TopologyConfig) -> Result<SignedGraph> {
    if cfg.line_graph {
        build_line_graph(primary)
    } else {
        Ok(primary.clone())
    }
}

pub fn prepare(ds: &LabeledDataset, primary: &SignedGraph, spec: &ChunkSpec, topo: &TopologyConfig) -> Result<Prepared> {
    ds.validate()?;
    let channels = channel_graph(primary, topo)?;
    if channels.n_nodes() != ds.n_channels() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_channels(),
            actual: channels.n_nodes(),
        });
    }
    let d = spec.resolve_len(ds.n_times())?;
    let topology = build_product_graph(&channels, spec.n_chunks, topo.temporal_weight)?;
    let signals = ds
        .samples
        .par_iter()
        .map(|s| chunk(s.signal.view(), spec.n_chunks, d, spec.drop_head, spec.drop_tail))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        chunking: Chunking {
            n_channels: ds.n_channels(),
            n_chunks: spec.n_chunks,
            chunk_len: d,
        },
        topology,
        signals,
        labels: ds.samples.iter().map(|s| s.label).collect(),
        subjects: ds.samples.iter().map(|s| s.subject).collect(),
    })
}

/// Seed of the class-`class` denoiser derived from the run seed.
pub fn class_seed(seed: u64, class: u8) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(u64::from(class) + 1)
}

/// Initialises and trains the class-0 and class-1 denoisers.
pub fn train_pair(cfg: &RunConfig, prep: &Prepared, split: &Split, seed: u64) -> Result<[TrainOutcome; 2]> {
    let train_one = |class: u8| -> Result<TrainOutcome> {
        let data = prep.train_data(split, class);
        let s = class_seed(seed, class);
        let model = init_denoiser(&cfg.model, prep.topology.clone(), prep.chunking, &data, &cfg.train, s)?;
        train_denoiser(model, &data, &cfg.train, s)
    };
    Ok([train_one(0)?, train_one(1)?])
}

/// Builds the classifier, applying the inference filter override if set.
pub fn classifier(cfg: &RunConfig, psi0: DenoiserModel, psi1: DenoiserModel) -> Result<ClassifierPair> {
    let mut models = [psi0, psi1];
    if let Some(f) = cfg.eval.filter {
        for m in &mut models {
            for b in &mut m.blocks {
                b.filter = f;
            }
            m.validate()?;
        }
    }
    let [a, b] = models;
    let mut pair = ClassifierPair::new(a, b)?;
    pair.tie_class = cfg.eval.tie_class;
    Ok(pair)
}

/// Classifies the samples `idx` and scores them.
pub fn evaluate_indices(pair: &ClassifierPair, prep: &Prepared, idx: &[usize]) -> Result<(MetricsReport, Vec<Prediction>)> {
    let signals: Vec<Array2<f64>> = idx.iter().map(|&k| prep.signals[k].clone()).collect();
    let labels: Vec<u8> = idx.iter().map(|&k| prep.labels[k]).collect();
    pair.evaluate(&signals, &labels)
}
