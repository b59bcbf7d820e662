//! Gradients of the denoising losses: analytic for the filter cutoffs,
//! simultaneous perturbation for everything upstream of the
//! eigendecomposition.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use super::{Batch, Pair};
use crate::error::{Error, Result};
use crate::spectral::{sigmoid, sigmoid_response_domega, Backend, FilterMode};
use crate::unrolled::{denoise, denoise_trace, DenoiserModel, Trace};

/// Loss and cutoff gradient for one batch, together with the range of
/// eigenvalues seen by each block.
#[derive(Debug, Clone)]
pub struct SpectralGradient {
    pub loss: f64,
    /// `d loss / d omega_t`, one entry per block.
    pub grad: Vec<f64>,
    pub lambda_range: Vec<(f64, f64)>,
}

fn check_trainable(model: &DenoiserModel) -> Result<()> {
    for (t, b) in model.blocks.iter().enumerate() {
        if b.filter.mode != FilterMode::Sigmoid || b.filter.backend != Backend::Exact {
            return Err(Error::InvalidConfig(format!(
                "block {t}: cutoff gradients need sigmoid filters with the exact backend"
            )));
        }
    }
    Ok(())
}

fn flip(beta: &Array1<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for (mut row, &b) in out.rows_mut().into_iter().zip(beta.iter()) {
        if b < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
    out
}

/// Backpropagates `d loss / d output` through the traced blocks, treating
/// every block's polarities and eigenvectors as constants. Returns the
/// cutoff gradient of each block.
pub fn backprop_cutoffs(model: &DenoiserModel, trace: &Trace, dout: &Array2<f64>) -> Vec<f64> {
    let mut grad = vec![0.0; trace.blocks.len()];
    let mut g_out = dout.clone();
    for (t, bt) in trace.blocks.iter().enumerate().rev() {
        let spec = &model.blocks[t].filter;
        let v = &bt.eig.vectors;
        let a = v.t().dot(&flip(&bt.beta, &bt.input));
        let mut gb = v.t().dot(&flip(&bt.beta, &g_out));
        let mut acc = 0.0;
        for (k, &lam) in bt.eig.values.iter().enumerate() {
            let dg = sigmoid_response_domega(spec.alpha, spec.omega, lam);
            let inner: f64 = a.row(k).iter().zip(gb.row(k).iter()).map(|(p, q)| p * q).sum();
            acc += dg * inner;
        }
        grad[t] = acc;
        for (mut row, &lam) in gb.rows_mut().into_iter().zip(bt.eig.values.iter()) {
            row *= sigmoid(spec.alpha * (spec.omega - lam));
        }
        g_out = flip(&bt.beta, &v.dot(&gb));
    }
    grad
}

fn squared_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

struct PairGrad {
    loss: f64,
    grad: Vec<f64>,
    ranges: Vec<(f64, f64)>,
}

fn pair_grad(model: &DenoiserModel, p: &Pair, sign: f64) -> Result<PairGrad> {
    let trace = denoise_trace(model, p.noisy.view())?;
    let loss = squared_error(&p.clean, &trace.output);
    let dout = (&trace.output - &p.clean) * (2.0 * sign);
    let grad = backprop_cutoffs(model, &trace, &dout);
    let ranges = trace
        .blocks
        .iter()
        .map(|b| (b.eig.values[0], b.eig.values[b.eig.values.len() - 1]))
        .collect();
    Ok(PairGrad { loss, grad, ranges })
}

/// Batch loss `sum_i ||x_i - Psi(y_i)||^2 + max(rho - ||xbar_i - Psi(ybar_i)||^2, 0)`
/// and its exact gradient with respect to the cutoffs under frozen graphs.
/// A margin of zero drops the second term and its gradient.
pub fn grad_spectral(model: &DenoiserModel, batch: &Batch) -> Result<SpectralGradient> {
    check_trainable(model)?;
    let n_blocks = model.blocks.len();
    let own: Vec<PairGrad> = batch
        .own
        .par_iter()
        .map(|p| pair_grad(model, p, 1.0))
        .collect::<Result<_>>()?;
    let other: Vec<PairGrad> = if batch.rho > 0.0 {
        batch
            .other
            .par_iter()
            .map(|p| {
                let mut g = pair_grad(model, p, -1.0)?;
                let margin = batch.rho - g.loss;
                if margin > 0.0 {
                    g.loss = margin;
                } else {
                    g.loss = 0.0;
                    g.grad.iter_mut().for_each(|v| *v = 0.0);
                }
                Ok(g)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_blocks];
    let mut lambda_range = vec![(f64::INFINITY, f64::NEG_INFINITY); n_blocks];
    for g in own.iter().chain(other.iter()) {
        loss += g.loss;
        for t in 0..n_blocks {
            grad[t] += g.grad[t];
            lambda_range[t].0 = lambda_range[t].0.min(g.ranges[t].0);
            lambda_range[t].1 = lambda_range[t].1.max(g.ranges[t].1);
        }
    }
    Ok(SpectralGradient {
        loss,
        grad,
        lambda_range,
    })
}

/// Batch loss of the contrastive objective (forward passes only).
pub fn batch_loss(model: &DenoiserModel, batch: &Batch) -> Result<f64> {
    let own: Vec<f64> = batch
        .own
        .par_iter()
        .map(|p| Ok(squared_error(&p.clean, &denoise(model, p.noisy.view())?)))
        .collect::<Result<_>>()?;
    let other: Vec<f64> = if batch.rho > 0.0 {
        batch
            .other
            .par_iter()
            .map(|p| {
                let e = squared_error(&p.clean, &denoise(model, p.noisy.view())?);
                Ok((batch.rho - e).max(0.0))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(own.iter().sum::<f64>() + other.iter().sum::<f64>())
}

/// One simultaneous-perturbation estimate
/// `[f(theta + c D) - f(theta - c D)] / (2c) * D^-1` with a Rademacher `D`.
pub fn spsa_gradient(
    theta: &[f64],
    c: f64,
    rng: &mut impl Rng,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("perturbation size must be positive, got {c}")));
    }
    let delta: Vec<f64> = theta
        .iter()
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + c * d).collect();
    let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - c * d).collect();
    let diff = f(&plus)? - f(&minus)?;
    Ok(delta.iter().map(|d| diff / (2.0 * c) / d).collect())
}

/// SPSA estimate of the batch-loss gradient over the model's shape
/// parameters (feature extractors and metric factors).
pub fn grad_shape_spsa(model: &DenoiserModel, batch: &Batch, rng: &mut impl Rng, c_k: f64) -> Result<Vec<f64>> {
    let theta = model.shape_params();
    let mut probe = model.clone();
    spsa_gradient(&theta, c_k, rng, |p| {
        probe.set_shape_params(p);
        batch_loss(&probe, batch)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_loss_gives_zero_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = spsa_gradient(&[1.0, -2.0, 3.0], 0.1, &mut rng, |_| Ok(4.2)).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_loss_is_recovered_exactly_per_coordinate_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = [1.0, 2.0];
        let g = spsa_gradient(&[0.0, 0.0], 0.5, &mut rng, |p| Ok(a[0] * p[0] + a[1] * p[1])).unwrap();
        // estimate is (a . D) D, so its projection on D equals a . D
        assert!(g.iter().all(|v| v.abs() == 1.0 || v.abs() == 3.0));
    }

    #[test]
    fn spsa_is_reproducible() {
        let f = |p: &[f64]| Ok(p.iter().map(|v| v * v).sum::<f64>());
        let a = spsa_gradient(&[0.3, 0.1], 0.01, &mut ChaCha8Rng::seed_from_u64(5), f).unwrap();
        let b = spsa_gradient(&[0.3, 0.1], 0.01, &mut ChaCha8Rng::seed_from_u64(5), f).unwrap();
        assert_eq!(a, b);
        assert!(spsa_gradient(&[0.3], 0.0, &mut ChaCha8Rng::seed_from_u64(5), f).is_err());
    }
}
