//! Batch normalization over `[B,H,W,C]` activations, per channel.
//!
//! Training mode normalizes with the current batch's mean and biased
//! variance computed over `(B,H,W)`, then folds the batch statistics into
//! running estimates by exponential moving average. Inference mode uses the
//! running estimates only, so a single example can be normalized without a
//! batch. A training batch of one has no usable variance and is rejected.

use crate::error::{Error, Result};
use crate::nn::BatchNormParams;
use crate::tensor::Tensor;

pub const EPSILON: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Everything the backward pass needs: the normalized activations and the
/// per-channel inverse standard deviation of the batch.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

fn channel_dims(x: &Tensor, params: &BatchNormParams) -> Result<(usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            context: "batch norm input must be [batch, h, w, channels]",
            left: x.shape().to_vec(),
            right: vec![4],
        });
    }
    let c = x.shape()[3];
    if params.gamma.shape() != [c] {
        return Err(Error::ShapeMismatch {
            context: "batch norm gamma",
            left: params.gamma.shape().to_vec(),
            right: vec![c],
        });
    }
    Ok((x.len() / c, c))
}

/// Returns the normalized output, plus the backward cache in train mode.
/// Train mode mutates `params` by advancing the running mean/variance:
/// `running = MOMENTUM · running + (1 − MOMENTUM) · batch_stat`.
pub fn forward(
    x: &Tensor,
    params: &mut BatchNormParams,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let (n, c) = channel_dims(x, params)?;
    match mode {
        Mode::Infer => Ok((forward_infer(x, params)?, None)),
        Mode::Train => {
            if x.shape()[0] < 2 {
                return Err(Error::DegenerateBatch {
                    batch: x.shape()[0],
                });
            }
            // Single pass over the (large) activations for both moments;
            // biased (population) variance via E[x²] − E[x]², matching the
            // 1/n normalizer the backward pass assumes. Activations are
            // bounded, so the cancellation in the difference is harmless at
            // f64 precision.
            let mut sum = vec![0.0; c];
            let mut sumsq = vec![0.0; c];
            for px in x.data().chunks_exact(c) {
                for ((s, q), &v) in sum.iter_mut().zip(&mut sumsq).zip(px) {
                    *s += v;
                    *q = v.mul_add(v, *q);
                }
            }
            let mean: Vec<f64> = sum.iter().map(|&s| s / n as f64).collect();
            let var: Vec<f64> = sumsq
                .iter()
                .zip(&mean)
                .map(|(&q, &m)| (q / n as f64 - m * m).max(0.0))
                .collect();

            let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + EPSILON).sqrt()).collect();

            // One more pass writes the normalized cache and the affine
            // output together, so x is read exactly twice in total.
            let gamma = params.gamma.data();
            let beta = params.beta.data();
            let mut x_hat = Tensor::zeros(x.shape())?;
            let mut out = Tensor::zeros(x.shape())?;
            for ((hpx, opx), px) in x_hat
                .data_mut()
                .chunks_exact_mut(c)
                .zip(out.data_mut().chunks_exact_mut(c))
                .zip(x.data().chunks_exact(c))
            {
                for (k, (h, o)) in hpx.iter_mut().zip(opx).enumerate() {
                    let xh = (px[k] - mean[k]) * inv_std[k];
                    *h = xh;
                    *o = gamma[k].mul_add(xh, beta[k]);
                }
            }

            advance_running(params, &mean, &var);

            Ok((out, Some(BatchNormCache { x_hat, inv_std })))
        }
    }
}

/// Folds one batch's statistics into the running estimates:
/// `running = MOMENTUM · running + (1 − MOMENTUM) · batch_stat`.
pub(crate) fn advance_running(params: &mut BatchNormParams, mean: &[f64], var: &[f64]) {
    for (r, &m) in params.running_mean.data_mut().iter_mut().zip(mean) {
        *r = MOMENTUM * *r + (1.0 - MOMENTUM) * m;
    }
    for (r, &v) in params.running_var.data_mut().iter_mut().zip(var) {
        *r = MOMENTUM * *r + (1.0 - MOMENTUM) * v;
    }
}

/// Inference-mode normalization against the running statistics; needs no
/// mutable access and accepts any batch size.
pub fn forward_infer(x: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    if x.rank() != 4 || params.gamma.shape() != [x.shape()[3]] {
        return Err(Error::ShapeMismatch {
            context: "batch norm infer input",
            left: x.shape().to_vec(),
            right: params.gamma.shape().to_vec(),
        });
    }
    normalize_affine(
        x,
        params.running_mean.data(),
        &inv_std_of(params.running_var.data()),
        params.gamma.data(),
        params.beta.data(),
        x.shape()[3],
    )
}

fn inv_std_of(var: &[f64]) -> Vec<f64> {
    var.iter().map(|&v| 1.0 / (v + EPSILON).sqrt()).collect()
}

fn normalize_affine(
    x: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
    c: usize,
) -> Result<Tensor> {
    let mut out = Tensor::zeros(x.shape())?;
    for (opx, px) in out.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
        for (k, o) in opx.iter_mut().enumerate() {
            *o = gamma[k] * (px[k] - mean[k]) * inv_std[k] + beta[k];
        }
    }
    Ok(out)
}

/// Train-mode gradients. With `n` values per channel and `x̂` the cached
/// normalized input:
///
/// `dγ = Σ g·x̂`, `dβ = Σ g`,
/// `dx = γ/(n·σ) · (n·g − Σg − x̂·Σ(g·x̂))`
///
/// — the full chain rule through the batch mean and variance, not just the
/// affine part. Takes `grad_out` by value and rewrites it in place into the
/// input gradient; the activations involved are large enough that the spared
/// allocation and write pass are measurable.
pub fn backward(
    mut grad_out: Tensor,
    params: &BatchNormParams,
    cache: &BatchNormCache,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::ShapeMismatch {
            context: "batch norm grad_out",
            left: grad_out.shape().to_vec(),
            right: cache.x_hat.shape().to_vec(),
        });
    }
    let c = grad_out.shape()[3];
    let n = (grad_out.len() / c) as f64;

    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for (gpx, hpx) in grad_out.data().chunks_exact(c).zip(cache.x_hat.data().chunks_exact(c)) {
        for k in 0..c {
            grad_gamma[k] = gpx[k].mul_add(hpx[k], grad_gamma[k]);
            grad_beta[k] += gpx[k];
        }
    }

    let gamma = params.gamma.data();
    let scale: Vec<f64> = (0..c)
        .map(|k| gamma[k] * cache.inv_std[k] / n)
        .collect();
    for (gpx, hpx) in grad_out
        .data_mut()
        .chunks_exact_mut(c)
        .zip(cache.x_hat.data().chunks_exact(c))
    {
        for k in 0..c {
            gpx[k] = scale[k] * (n * gpx[k] - grad_beta[k] - hpx[k] * grad_gamma[k]);
        }
    }

    Ok((
        grad_out,
        Tensor::from_vec(&[c], grad_gamma)?,
        Tensor::from_vec(&[c], grad_beta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fresh_params(c: usize) -> BatchNormParams {
        BatchNormParams {
            gamma: Tensor::full(&[c], 1.0).unwrap(),
            beta: Tensor::zeros(&[c]).unwrap(),
            running_mean: Tensor::zeros(&[c]).unwrap(),
            running_var: Tensor::full(&[c], 1.0).unwrap(),
        }
    }

    /// Spread-out random input: variance around 100, so the ε in the
    /// denominator perturbs the output variance by only σ²/(σ²+ε) ≈ 1e-7.
    fn wide_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::substream(seed, "bn-test", 0);
        Tensor::from_fn(shape, |_| rng.random_range(-17.0..17.0)).unwrap()
    }

    fn channel_stats(t: &Tensor, k: usize) -> (f64, f64) {
        let c = t.shape()[3];
        let vals: Vec<f64> = t.data().iter().skip(k).step_by(c).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x = wide_input(&[4, 3, 5, 2], 1);
        let mut params = fresh_params(2);
        let (out, cache) = forward(&x, &mut params, Mode::Train).unwrap();
        assert!(cache.is_some());
        for k in 0..2 {
            let (mean, var) = channel_stats(&out, k);
            assert!(mean.abs() < 1e-9, "channel {k} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {k} var {var}");
        }
    }

    #[test]
    fn affine_params_shift_and_scale() {
        let x = wide_input(&[4, 2, 2, 1], 2);
        let mut params = fresh_params(1);
        params.gamma.data_mut()[0] = 2.0;
        params.beta.data_mut()[0] = 3.0;
        let (out, _) = forward(&x, &mut params, Mode::Train).unwrap();
        let (mean, var) = channel_stats(&out, 0);
        assert!((mean - 3.0).abs() < 1e-9);
        assert!((var - 4.0).abs() < 4e-6);
    }

    #[test]
    fn constant_channel_collapses_to_beta() {
        let x = Tensor::full(&[3, 2, 2, 1], 5.5).unwrap();
        let mut params = fresh_params(1);
        params.beta.data_mut()[0] = -0.25;
        let (out, _) = forward(&x, &mut params, Mode::Train).unwrap();
        for &v in out.data() {
            assert!((v - -0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_of_one_is_degenerate_in_train_mode() {
        let x = Tensor::zeros(&[1, 2, 2, 3]).unwrap();
        let mut params = fresh_params(3);
        assert!(matches!(
            forward(&x, &mut params, Mode::Train),
            Err(Error::DegenerateBatch { batch: 1 })
        ));
        // ...but fine at inference.
        assert!(forward(&x, &mut params, Mode::Infer).is_ok());
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let x = wide_input(&[8, 2, 2, 1], 3);
        let mut params = fresh_params(1);
        let batch_mean = x.data().iter().sum::<f64>() / x.len() as f64;
        forward(&x, &mut params, Mode::Train).unwrap();
        let expected = MOMENTUM * 0.0 + (1.0 - MOMENTUM) * batch_mean;
        assert!((params.running_mean.data()[0] - expected).abs() < 1e-12);

        // Feeding the same batch many times converges the running mean to
        // the batch mean.
        for _ in 0..200 {
            forward(&x, &mut params, Mode::Train).unwrap();
        }
        assert!((params.running_mean.data()[0] - batch_mean).abs() < 1e-6);
    }

    #[test]
    fn infer_mode_uses_running_stats_and_is_stateless() {
        let x = wide_input(&[4, 2, 3, 2], 4);
        let mut params = fresh_params(2);
        forward(&x, &mut params, Mode::Train).unwrap();
        let snapshot = params.clone();
        let (a, cache) = forward(&x, &mut params, Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert_eq!(params, snapshot, "infer must not touch running stats");
        let (b, _) = forward(&x, &mut params, Mode::Infer).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grad_beta_is_channel_sum_of_grad_out() {
        let x = wide_input(&[3, 2, 2, 2], 5);
        let mut params = fresh_params(2);
        let (_, cache) = forward(&x, &mut params, Mode::Train).unwrap();
        let g = wide_input(&[3, 2, 2, 2], 6);
        let (_, _, gb) = backward(g.clone(), &params, &cache.unwrap()).unwrap();
        for k in 0..2 {
            let manual: f64 = g.data().iter().skip(k).step_by(2).sum();
            assert!((gb.data()[k] - manual).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let x = wide_input(&[2, 2, 2, 1], 7);
        let mut params = fresh_params(1);
        let (_, cache) = forward(&x, &mut params, Mode::Train).unwrap();
        let g = Tensor::zeros(&[2, 2, 2, 1]).unwrap();
        let (gx, gg, gb) = backward(g, &params, &cache.unwrap()).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert_eq!(gg.data(), &[0.0]);
        assert_eq!(gb.data(), &[0.0]);
    }
}
