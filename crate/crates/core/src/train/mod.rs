//! Denoiser training: noise corruption, plain and contrastive objectives,
//! hard-pair mining, data-driven initialisation and the training loop.
//!
//! Cutoffs get exact gradients with every block's graph held fixed
//! ([`grad_spectral`]); feature extractors and metric factors are updated
//! from simultaneous-perturbation estimates ([`grad_shape_spsa`]).

mod grad;
mod schedule;

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use grad::{backprop_cutoffs, batch_loss, grad_shape_spsa, grad_spectral, spsa_gradient, SpectralGradient};
pub use schedule::LrSchedule;

use crate::balance::{default_anchor, node_covariance, tree_polarity, update_polarities_multi};
use crate::error::{Error, Result};
use crate::graph::{PolarityVector, SignedGraph};
use crate::spectral::{eigh, FilterMode};
use crate::unrolled::{bgl_block, block_forward, block_weights, denoise, Architecture, Chunking, DenoiserModel};

/// A clean signal and its noisy observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub clean: Array2<f64>,
    pub noisy: Array2<f64>,
}

/// Own-class pairs, other-class pairs (same length, matched by mining) and
/// the contrastive margin.
#[derive(Debug, Clone)]
pub struct Batch {
    pub own: Vec<Pair>,
    pub other: Vec<Pair>,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpsaConfig {
    pub enabled: bool,
    /// Perturbation size `c` in `c_k = c / (k + 1)^decay`.
    pub perturb_scale: f64,
    pub decay: f64,
    /// Step multiplier applied on top of the learning rate.
    pub gain: f64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        SpsaConfig {
            enabled: true,
            perturb_scale: 0.05,
            decay: 0.101,
            gain: 1.0,
        }
    }
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Own-class squared error only.
    Plain,
    /// Own-class squared error plus a hinge on mined other-class pairs.
    Contrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub noise_sigma: f64,
    /// Hinge margin of the contrastive objective.
    pub rho: f64,
    pub lr: LrSchedule,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub spsa: SpsaConfig,
    /// Candidate cutoffs tried per block during initialisation.
    pub omega_grid: usize,
    /// Training pairs used for initialisation (cutoff search).
    pub init_samples: usize,
    /// Polarity sweeps per block at initialisation.
    pub init_polarity_sweeps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Contrastive,
            noise_sigma: 0.01,
            rho: 1.0,
            lr: LrSchedule::default(),
            epochs: 100,
            patience: 10,
            batch_size: 8,
            spsa: SpsaConfig::default(),
            omega_grid: 16,
            init_samples: 64,
            init_polarity_sweeps: 20,
        }
    }
}

impl TrainConfig {
    /// Margin actually used: zero for the plain objective.
    pub fn margin(&self) -> f64 {
        match self.objective {
            Objective::Plain => 0.0,
            Objective::Contrastive => self.rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return bad(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return bad(format!("rho must be nonnegative, got {}", self.rho));
        }
        if !(self.lr.initial > 0.0 && self.lr.floor >= 0.0 && self.lr.floor <= self.lr.initial && self.lr.t0 > 0) {
            return bad("learning-rate schedule needs initial > 0, 0 <= floor <= initial, t0 > 0".into());
        }
        if self.batch_size == 0 || self.omega_grid == 0 || self.init_samples == 0 {
            return bad("batch_size, omega_grid and init_samples must be positive".into());
        }
        let s = &self.spsa;
        if !(s.perturb_scale > 0.0 && s.decay >= 0.0 && s.gain >= 0.0) {
            return bad("spsa needs perturb_scale > 0, decay >= 0 and gain >= 0".into());
        }
        Ok(())
    }
}

/// RNG streams, one per purpose.
const STREAM_INIT: u64 = 11;
const STREAM_NOISE: u64 = 12;
const STREAM_SHUFFLE: u64 = 13;
const STREAM_SPSA: u64 = 14;
const STREAM_VAL_NOISE: u64 = 15;

pub fn rng_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `x + n` with `n ~ N(0, sigma^2 I)`.
pub fn corrupt(x: ArrayView2<f64>, sigma: f64, rng: &mut impl Rng) -> Array2<f64> {
    x.mapv(|v| {
        let e: f64 = StandardNormal.sample(rng);
        v + sigma * e
    })
}

fn squared_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `sum_i ||x_i - Psi(y_i)||^2`.
pub fn loss_plain(model: &DenoiserModel, pairs: &[Pair]) -> Result<f64> {
    let errs: Vec<f64> = pairs
        .par_iter()
        .map(|p| Ok(squared_error(&p.clean, &denoise(model, p.noisy.view())?)))
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum())
}

/// Contrastive term for given reconstruction errors.
pub fn contrastive_value(own_err: f64, other_err: f64, rho: f64) -> f64 {
    own_err + (rho - other_err).max(0.0)
}

/// `sum_i ||x_i - Psi(y_i)||^2 + max(rho - ||xbar_i - Psi(ybar_i)||^2, 0)`.
pub fn loss_contrastive(model: &DenoiserModel, own: &[Pair], other: &[Pair], rho: f64) -> Result<f64> {
    if own.len() != other.len() {
        return Err(Error::DimensionMismatch {
            expected: own.len(),
            actual: other.len(),
        });
    }
    let terms: Vec<f64> = own
        .par_iter()
        .zip(other.par_iter())
        .map(|(a, b)| {
            let ea = squared_error(&a.clean, &denoise(model, a.noisy.view())?);
            let eb = squared_error(&b.clean, &denoise(model, b.noisy.view())?);
            Ok(contrastive_value(ea, eb, rho))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Greedy cross-class matching: repeatedly takes the closest unmatched
/// pair (squared Euclidean distance, ties by index), `count` times.
/// Returns index pairs `(i0, i1)`.
pub fn mine_hard_pairs(class0: &[ArrayView2<f64>], class1: &[ArrayView2<f64>], count: usize) -> Vec<(usize, usize)> {
    let limit = class0.len().min(class1.len());
    if count > limit {
        log::warn!("requested {count} hard pairs but only {limit} can be formed; truncating");
    }
    let count = count.min(limit);
    let mut cand: Vec<(f64, usize, usize)> = class0
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, a)| {
            class1.iter().enumerate().map(move |(j, b)| {
                let d: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
                (d, i, j)
            })
        })
        .collect();
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used0 = vec![false; class0.len()];
    let mut used1 = vec![false; class1.len()];
    let mut out = Vec::with_capacity(count);
    for (_, i, j) in cand {
        if out.len() == count {
            break;
        }
        if !used0[i] && !used1[j] {
            used0[i] = true;
            used1[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Clean training and validation signals (chunked, `n_nodes x E`) of the
/// class being modelled and of the other class.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train_own: Vec<Array2<f64>>,
    pub train_other: Vec<Array2<f64>>,
    pub val_own: Vec<Array2<f64>>,
    pub val_other: Vec<Array2<f64>>,
}

impl TrainData {
    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("training (own class)", &self.train_own),
            ("training (other class)", &self.train_other),
            ("validation (own class)", &self.val_own),
            ("validation (other class)", &self.val_other),
        ] {
            if v.is_empty() {
                return Err(Error::EmptyPartition(name.to_string()));
            }
        }
        Ok(())
    }
}

/// Own signals in order, each matched with a mined other-class partner;
/// own signals left unmatched reuse partners cyclically.
fn matched_pairs(own: &[Array2<f64>], other: &[Array2<f64>]) -> Vec<(usize, usize)> {
    let a: Vec<ArrayView2<f64>> = own.iter().map(|x| x.view()).collect();
    let b: Vec<ArrayView2<f64>> = other.iter().map(|x| x.view()).collect();
    let mined = mine_hard_pairs(&a, &b, own.len().min(other.len()));
    let mut partner = vec![usize::MAX; own.len()];
    for &(i, j) in &mined {
        partner[i] = j;
    }
    let mut k = 0;
    for p in partner.iter_mut().filter(|p| **p == usize::MAX) {
        *p = mined[k % mined.len()].1;
        k += 1;
    }
    partner.into_iter().enumerate().collect()
}

fn make_pairs(
    own: &[Array2<f64>],
    other: &[Array2<f64>],
    matching: &[(usize, usize)],
    sigma: f64,
    rng: &mut impl Rng,
) -> (Vec<Pair>, Vec<Pair>) {
    let mut a = Vec::with_capacity(matching.len());
    let mut b = Vec::with_capacity(matching.len());
    for &(i, j) in matching {
        a.push(Pair {
            clean: own[i].clone(),
            noisy: corrupt(own[i].view(), sigma, rng),
        });
        b.push(Pair {
            clean: other[j].clone(),
            noisy: corrupt(other[j].view(), sigma, rng),
        });
    }
    (a, b)
}

/// Block inputs of `model` for the given signals, one list per block
/// (`[t][q]` is the input of block `t` for signal `q`).
fn block_inputs(model: &DenoiserModel, signals: &[Array2<f64>], upto: usize) -> Result<Vec<Vec<Array2<f64>>>> {
    let per_signal: Vec<Vec<Array2<f64>>> = signals
        .par_iter()
        .map(|y| {
            let mut x = y.clone();
            let mut inputs = Vec::with_capacity(upto);
            for block in model.blocks.iter().take(upto) {
                inputs.push(x.clone());
                x = block_forward(model, block, x.view())?;
            }
            Ok(inputs)
        })
        .collect::<Result<_>>()?;
    Ok((0..upto)
        .map(|t| per_signal.iter().map(|v| v[t].clone()).collect())
        .collect())
}

/// Greedy polarity refinement of block `t` against the given block
/// inputs, with per-input weight magnitudes.
fn refine_block_polarity(
    model: &DenoiserModel,
    t: usize,
    inputs: &[Array2<f64>],
    sweeps: usize,
) -> Result<(PolarityVector, usize, bool)> {
    let block = &model.blocks[t];
    let graphs: Vec<SignedGraph> = inputs
        .par_iter()
        .map(|x| block_weights(model, block, &block.beta, x.view()))
        .collect::<Result<_>>()?;
    let instances: Vec<(&SignedGraph, ArrayView2<f64>)> =
        graphs.iter().zip(inputs.iter()).map(|(g, x)| (g, x.view())).collect();
    update_polarities_multi(&instances, model.n_nodes(), &block.beta, sweeps)
}

fn cutoff_candidates(model: &DenoiserModel, t: usize, inputs: &[Array2<f64>], count: usize) -> Result<Vec<f64>> {
    let block = &model.blocks[t];
    let mut values: Vec<f64> = inputs
        .par_iter()
        .map(|x| Ok(eigh(&bgl_block(model, block, x.view())?.laplacian)?.values.to_vec()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    values.sort_by(f64::total_cmp);
    let len = values.len();
    Ok((0..count)
        .map(|k| values[((2 * k + 1) * len / (2 * count)).min(len - 1)])
        .collect())
}

/// Builds a model for one class and fits its data-dependent state:
/// batch-norm statistics, polarities (balanced graphs only) and cutoffs,
/// block by block on a subset of the training data.
pub fn init_denoiser(
    arch: &Architecture,
    topology: SignedGraph,
    chunking: Chunking,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<DenoiserModel> {
    cfg.validate()?;
    data.check()?;
    let mut rng = rng_stream(seed, STREAM_INIT);
    let mut model = DenoiserModel::new(arch, topology, chunking, &mut rng)?;
    let n = model.n_nodes();
    let trainable = arch.filter.mode == FilterMode::Sigmoid;
    if model.graph.uses_polarity() {
        let cov = node_covariance(data.train_own.iter().map(|x| x.view())).expect("nonempty training set");
        let beta = tree_polarity(&model.topology, cov.view(), default_anchor(cov.view()))?;
        for b in &mut model.blocks {
            b.beta = beta.clone();
        }
    }
    // start every filter as (nearly) all-pass so later blocks see the data
    if trainable {
        for b in &mut model.blocks {
            b.filter.omega = 1e3;
        }
    }
    let m = cfg.init_samples.min(data.train_own.len());
    let own: Vec<Array2<f64>> = data.train_own[..m].to_vec();
    let other_idx: Vec<usize> = matched_pairs(&own, &data.train_other).into_iter().map(|p| p.1).collect();
    let other: Vec<Array2<f64>> = other_idx.iter().map(|&j| data.train_other[j].clone()).collect();
    let mut nrng = rng_stream(seed, STREAM_INIT + 100);
    let noisy_own: Vec<Array2<f64>> = own.iter().map(|x| corrupt(x.view(), cfg.noise_sigma, &mut nrng)).collect();
    let noisy_other: Vec<Array2<f64>> = other.iter().map(|x| corrupt(x.view(), cfg.noise_sigma, &mut nrng)).collect();
    let all_train: Vec<Array2<f64>> = data.train_own.clone();
    for t in 0..model.blocks.len() {
        let inputs = block_inputs(&model, &all_train, t + 1)?.pop().expect("t + 1 blocks");
        model.blocks[t].features.calibrate(inputs.iter().map(|x| x.view()));
        if model.graph.uses_polarity() && cfg.init_polarity_sweeps > 0 {
            let (beta, sweeps, converged) = refine_block_polarity(&model, t, &inputs, cfg.init_polarity_sweeps)?;
            log::debug!("block {t}: polarity fit after {sweeps} sweeps (converged: {converged})");
            model.blocks[t].beta = beta;
        }
        if trainable {
            let noisy_inputs = block_inputs(&model, &noisy_own, t + 1)?.pop().expect("t + 1 blocks");
            let cands = cutoff_candidates(&model, t, &noisy_inputs, cfg.omega_grid)?;
            let mut best = (f64::INFINITY, model.blocks[t].filter.omega);
            for &w in &cands {
                let mut trial = model.clone();
                trial.blocks[t].filter.omega = w;
                let own_pairs: Vec<Pair> = own
                    .iter()
                    .zip(&noisy_own)
                    .map(|(c, y)| Pair {
                        clean: c.clone(),
                        noisy: y.clone(),
                    })
                    .collect();
                let other_pairs: Vec<Pair> = other
                    .iter()
                    .zip(&noisy_other)
                    .map(|(c, y)| Pair {
                        clean: c.clone(),
                        noisy: y.clone(),
                    })
                    .collect();
                let l = loss_contrastive(&trial, &own_pairs, &other_pairs, cfg.margin())?;
                if l < best.0 {
                    best = (l, w);
                }
            }
            model.blocks[t].filter.omega = best.1;
        }
    }
    debug_assert_eq!(model.n_nodes(), n);
    model.validate()?;
    Ok(model)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the best validation loss (the input model when no epoch
    /// ran).
    pub model: DenoiserModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

/// Mean contrastive validation loss with fixed noise.
fn validation_loss(model: &DenoiserModel, own: &[Pair], other: &[Pair], rho: f64) -> Result<f64> {
    Ok(loss_contrastive(model, own, other, rho)? / own.len() as f64)
}

/// Trains the cutoffs, feature extractors and metric factors of `model`.
/// Noise realisations are drawn once per training pair; batches are
/// reshuffled every epoch. Returns the best-validation model.
pub fn train_denoiser(model: DenoiserModel, data: &TrainData, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check()?;
    let mut model = model;
    let mut nrng = rng_stream(seed, STREAM_NOISE);
    let mut vrng = rng_stream(seed, STREAM_VAL_NOISE);
    let mut shuffle_rng = rng_stream(seed, STREAM_SHUFFLE);
    let mut spsa_rng = rng_stream(seed, STREAM_SPSA);

    let train_match = matched_pairs(&data.train_own, &data.train_other);
    let (own, other) = make_pairs(&data.train_own, &data.train_other, &train_match, cfg.noise_sigma, &mut nrng);
    let val_match = matched_pairs(&data.val_own, &data.val_other);
    let (val_own, val_other) = make_pairs(&data.val_own, &data.val_other, &val_match, cfg.noise_sigma, &mut vrng);

    let initial_val = validation_loss(&model, &val_own, &val_other, cfg.margin())?;
    let mut best = (initial_val, model.clone(), None);
    let mut log = Vec::new();
    let mut since_best = 0;
    let mut step = 0usize;
    let use_polarity = model.graph.uses_polarity() && model.polarity_sweeps > 0;
    let mut order: Vec<usize> = (0..own.len()).collect();
    let full_loss = |m: &DenoiserModel| -> Result<f64> { Ok(loss_contrastive(m, &own, &other, cfg.margin())? / own.len() as f64) };
    let mut prev_train = if cfg.epochs > 0 { full_loss(&model)? } else { f64::NAN };
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr.rate(epoch);
        let shape_before = model.shape_params();
        if use_polarity {
            for t in 0..model.blocks.len() {
                let inputs = block_inputs(&model, &data.train_own, t + 1)?.pop().expect("t + 1 blocks");
                let (beta, _, _) = refine_block_polarity(&model, t, &inputs, model.polarity_sweeps)?;
                model.blocks[t].beta = beta;
            }
        }
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                own: chunk.iter().map(|&i| own[i].clone()).collect(),
                other: chunk.iter().map(|&i| other[i].clone()).collect(),
                rho: cfg.margin(),
            };
            let bs = chunk.len() as f64;
            let sg = grad_spectral(&model, &batch)?;
            if !sg.loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            for (t, b) in model.blocks.iter_mut().enumerate() {
                let (lo, hi) = sg.lambda_range[t];
                let w = b.filter.omega - lr * sg.grad[t] / bs;
                b.filter.omega = w.clamp(lo, hi);
            }
            if cfg.spsa.enabled {
                let c_k = cfg.spsa.perturb_scale / ((step + 1) as f64).powf(cfg.spsa.decay);
                let g = grad_shape_spsa(&model, &batch, &mut spsa_rng, c_k)?;
                let theta = model.shape_params();
                let stepped: Vec<f64> = theta
                    .iter()
                    .zip(&g)
                    .map(|(p, gi)| p - cfg.spsa.gain * lr * gi / bs)
                    .collect();
                let mut trial = model.clone();
                trial.set_shape_params(&stepped);
                let before = batch_loss(&model, &batch)?;
                let after = batch_loss(&trial, &batch)?;
                if after.is_finite() && after <= before {
                    model = trial;
                }
            }
            step += 1;
        }
        let mut train_loss = full_loss(&model)?;
        if !train_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        // blocking: shape updates that raised the full training loss are undone
        if cfg.spsa.enabled && train_loss > prev_train {
            let mut reverted = model.clone();
            reverted.set_shape_params(&shape_before);
            let l = full_loss(&reverted)?;
            if l < train_loss {
                log::debug!("epoch {epoch}: shape updates blocked ({train_loss:.6} -> {l:.6})");
                model = reverted;
                train_loss = l;
            }
        }
        prev_train = train_loss;
        let val_loss = validation_loss(&model, &val_own, &val_other, cfg.margin())?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:.2e}");
        log::debug!(
            "epoch {epoch}: cutoffs {:?}",
            model.blocks.iter().map(|b| b.filter.omega).collect::<Vec<_>>()
        );
        if val_loss < best.0 {
            best = (val_loss, model.clone(), Some(epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.1,
        log,
        best_epoch: best.2,
        best_val_loss: best.0,
    })
}
