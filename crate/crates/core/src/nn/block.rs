//! Fused batch-norm → ReLU → max-pool tail of a conv block.
//!
//! Composing the three layers one by one is correct but makes seven or more
//! full passes over an activation tensor that outgrows every cache at
//! production batch sizes, so the training path uses this module instead:
//! batch statistics arrive precomputed from the conv kernel, normalization
//! and activation happen on the fly inside the pooling scan, and the
//! backward pass recomputes both the normalized values and the ReLU mask
//! from the cached conv output instead of storing either. The conv output
//! is read once forward and twice backward; nothing else of its size is
//! allocated. Results match the layer-by-layer composition to final-ulp
//! rounding, which the tests assert.

use crate::error::{Error, Result};
use crate::nn::batchnorm::{self, EPSILON};
use crate::nn::pool::{self, PoolCache};
use crate::nn::{BatchNormParams, ChannelMoments, PoolLayerSpec};
use crate::tensor::Tensor;

/// Lane width of the vectorized scans, one 512-bit register of doubles; the
/// scalar fallback covers channel counts that don't divide by it.
const CH: usize = 8;

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct BlockCache {
    /// The conv output, pre-normalization. The backward pass rewrites it in
    /// place into the input gradient, which is why it consumes the cache.
    pub x: Tensor,
    /// Batch mean per channel.
    pub mean: Vec<f64>,
    /// `1/√(var+ε)` per channel.
    pub inv_std: Vec<f64>,
    pub pool: PoolCache,
    pub spec: PoolLayerSpec,
}

/// The normalize-then-shift of batch norm folded into one FMA per value:
/// `γ·(x−μ)·s + β = x·a + b` with `a = γ·s`, `b = β − μ·a`.
///
/// Forward and backward must derive the ReLU mask from the *same*
/// expression, so both build it through here.
fn affine_of(params: &BatchNormParams, mean: &[f64], inv_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gamma = params.gamma.data();
    let beta = params.beta.data();
    let a: Vec<f64> = gamma.iter().zip(inv_std).map(|(&g, &s)| g * s).collect();
    let b: Vec<f64> = beta
        .iter()
        .zip(mean)
        .zip(&a)
        .map(|((&bt, &m), &av)| bt - m * av)
        .collect();
    (a, b)
}

fn check_x(x: &Tensor, params: &BatchNormParams) -> Result<usize> {
    if x.rank() != 4 || params.gamma.shape() != [x.shape()[3]] {
        return Err(Error::ShapeMismatch {
            context: "block input must be [batch, h, w, channels] matching the norm params",
            left: x.shape().to_vec(),
            right: params.gamma.shape().to_vec(),
        });
    }
    Ok(x.shape()[3])
}

/// Train-mode forward: normalizes with the batch statistics in `moments`,
/// advances the running estimates, applies ReLU, and max-pools — all in a
/// single scan of `x`. Takes `x` by value; it is kept in the cache.
pub fn forward(
    x: Tensor,
    params: &mut BatchNormParams,
    moments: &ChannelMoments,
    pool_spec: &PoolLayerSpec,
) -> Result<(Tensor, BlockCache)> {
    let c = check_x(&x, params)?;
    if x.shape()[0] < 2 {
        return Err(Error::DegenerateBatch { batch: x.shape()[0] });
    }
    if moments.sum.len() != c || moments.n != x.len() / c {
        return Err(Error::ShapeMismatch {
            context: "channel moments do not describe this activation",
            left: vec![moments.sum.len(), moments.n],
            right: vec![c, x.len() / c],
        });
    }

    let n = moments.n as f64;
    let mean: Vec<f64> = moments.sum.iter().map(|&s| s / n).collect();
    let var: Vec<f64> = moments
        .sumsq
        .iter()
        .zip(&mean)
        .map(|(&q, &m)| (q / n - m * m).max(0.0))
        .collect();
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + EPSILON).sqrt()).collect();
    batchnorm::advance_running(params, &mean, &var);

    let (aff_a, aff_b) = affine_of(params, &mean, &inv_std);
    let (out, cache) = pooled_scan(&x, &aff_a, &aff_b, pool_spec, true)?;

    Ok((
        out,
        BlockCache {
            x,
            mean,
            inv_std,
            pool: cache.expect("train scan always tracks winners"),
            spec: *pool_spec,
        },
    ))
}

/// Inference-mode forward against the running statistics: no cache, no
/// mutation, any batch size.
pub fn forward_infer(
    x: &Tensor,
    params: &BatchNormParams,
    pool_spec: &PoolLayerSpec,
) -> Result<Tensor> {
    check_x(x, params)?;
    let mean = params.running_mean.data().to_vec();
    let inv_std: Vec<f64> = params
        .running_var
        .data()
        .iter()
        .map(|&v| 1.0 / (v + EPSILON).sqrt())
        .collect();
    let (aff_a, aff_b) = affine_of(params, &mean, &inv_std);
    let (out, _) = pooled_scan(x, &aff_a, &aff_b, pool_spec, false)?;
    Ok(out)
}

/// One scan over `x`: per pooling window, compute `max(x·a + b, 0)` lanes on
/// the fly and keep the running maximum. With `track` the winning flat index
/// per output value is recorded for the backward scatter.
fn pooled_scan(
    x: &Tensor,
    aff_a: &[f64],
    aff_b: &[f64],
    spec: &PoolLayerSpec,
    track: bool,
) -> Result<(Tensor, Option<PoolCache>)> {
    let [batch, h, w, c] = [
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
    ];
    let (oh_dim, ow_dim) = spec.out_size(h, w);
    let mut out = Tensor::zeros(&[batch, oh_dim, ow_dim, c])?;
    let mut argmax = if track {
        vec![0usize; out.len()]
    } else {
        Vec::new()
    };

    let xd = x.data();
    let o = out.data_mut();
    let mut oi = 0;
    for b in 0..batch {
        for oh in 0..oh_dim {
            for ow in 0..ow_dim {
                let mut ch0 = 0;
                while ch0 + CH <= c {
                    let av: &[f64; CH] = aff_a[ch0..][..CH].try_into().unwrap();
                    let bv: &[f64; CH] = aff_b[ch0..][..CH].try_into().unwrap();
                    let mut best = [f64::NEG_INFINITY; CH];
                    let mut bidx = [usize::MAX; CH];
                    for dh in 0..spec.kernel_h {
                        let ih = oh * spec.stride_h + dh;
                        if ih >= h {
                            break;
                        }
                        for dw in 0..spec.kernel_w {
                            let iw = ow * spec.stride_w + dw;
                            if iw >= w {
                                break;
                            }
                            let base = ((b * h + ih) * w + iw) * c + ch0;
                            let px: &[f64; CH] = xd[base..][..CH].try_into().unwrap();
                            for l in 0..CH {
                                let act = px[l].mul_add(av[l], bv[l]).max(0.0);
                                // Strict comparison keeps the first maximum
                                // in row-major order on ties.
                                let take = act > best[l];
                                best[l] = if take { act } else { best[l] };
                                bidx[l] = if take { base + l } else { bidx[l] };
                            }
                        }
                    }
                    o[oi..oi + CH].copy_from_slice(&best);
                    if track {
                        argmax[oi..oi + CH].copy_from_slice(&bidx);
                    }
                    oi += CH;
                    ch0 += CH;
                }
                for k in ch0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = usize::MAX;
                    for dh in 0..spec.kernel_h {
                        let ih = oh * spec.stride_h + dh;
                        if ih >= h {
                            break;
                        }
                        for dw in 0..spec.kernel_w {
                            let iw = ow * spec.stride_w + dw;
                            if iw >= w {
                                break;
                            }
                            let idx = ((b * h + ih) * w + iw) * c + k;
                            let act = xd[idx].mul_add(aff_a[k], aff_b[k]).max(0.0);
                            if act > best {
                                best = act;
                                bi = idx;
                            }
                        }
                    }
                    o[oi] = best;
                    if track {
                        argmax[oi] = bi;
                    }
                    oi += 1;
                }
            }
        }
    }

    let cache = track.then(|| PoolCache {
        argmax,
        input_shape: x.shape().to_vec(),
    });
    Ok((out, cache))
}

/// Backward through pool, ReLU, and batch norm in one piece, with the ReLU
/// mask recomputed from the cached conv output through the same fused affine
/// as the forward scan, so the mask matches exactly. Consumes the cache and
/// rewrites its conv output in place into the input gradient. Returns
/// `(grad_x, grad_gamma, grad_beta)`.
pub fn backward(
    g_pooled: &Tensor,
    cache: BlockCache,
    params: &BatchNormParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = check_x(&cache.x, params)?;
    if g_pooled.len() != cache.pool.argmax.len() {
        return Err(Error::ShapeMismatch {
            context: "pooled gradient does not match the cached pooling",
            left: g_pooled.shape().to_vec(),
            right: vec![cache.pool.argmax.len()],
        });
    }
    let disjoint = cache.spec.stride_h == cache.spec.kernel_h
        && cache.spec.stride_w == cache.spec.kernel_w;
    if disjoint {
        backward_disjoint(g_pooled, cache, params, c)
    } else {
        backward_general(g_pooled, cache, params, c)
    }
}

/// Fast path for non-overlapping pooling (stride == kernel, the default):
/// every input position belongs to exactly one window, so only the argmax
/// winners carry a pooled gradient and the window scan can assign — not
/// accumulate — each input gradient. dγ/dβ come from a gather over the
/// winners alone; the second scan then overwrites `cache.x` with
/// `dx = γ/(n·σ) · (n·g′ − Σg′ − x̂·Σ(g′·x̂))`, where `g′` is the pooled
/// gradient routed through the ReLU mask (zero at non-winners).
fn backward_disjoint(
    g_pooled: &Tensor,
    mut cache: BlockCache,
    params: &BatchNormParams,
    c: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = (cache.x.len() / c) as f64;
    let (aff_a, aff_b) = affine_of(params, &cache.mean, &cache.inv_std);

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    {
        let xd = cache.x.data();
        let mut k = 0;
        for (&g, &src) in g_pooled.data().iter().zip(&cache.pool.argmax) {
            let pre = xd[src].mul_add(aff_a[k], aff_b[k]);
            if pre > 0.0 {
                dbeta[k] += g;
                dgamma[k] = g.mul_add((xd[src] - cache.mean[k]) * cache.inv_std[k], dgamma[k]);
            }
            k += 1;
            if k == c {
                k = 0;
            }
        }
    }

    let gamma = params.gamma.data();
    let scale: Vec<f64> = (0..c).map(|k| gamma[k] * cache.inv_std[k] / n).collect();
    let [batch, h, w, _] = [
        cache.x.shape()[0],
        cache.x.shape()[1],
        cache.x.shape()[2],
        cache.x.shape()[3],
    ];
    let spec = cache.spec;
    let (oh_dim, ow_dim) = spec.out_size(h, w);
    let gp = g_pooled.data();
    let bx = &cache.pool.argmax;
    let xd = cache.x.data_mut();

    let mut oi = 0;
    for b in 0..batch {
        for oh in 0..oh_dim {
            for ow in 0..ow_dim {
                let mut ch0 = 0;
                while ch0 + CH <= c {
                    let pgv: &[f64; CH] = gp[oi..][..CH].try_into().unwrap();
                    let bxv: &[usize; CH] = bx[oi..][..CH].try_into().unwrap();
                    let av: &[f64; CH] = aff_a[ch0..][..CH].try_into().unwrap();
                    let bv: &[f64; CH] = aff_b[ch0..][..CH].try_into().unwrap();
                    let mv: &[f64; CH] = cache.mean[ch0..][..CH].try_into().unwrap();
                    let sv: &[f64; CH] = cache.inv_std[ch0..][..CH].try_into().unwrap();
                    let cv: &[f64; CH] = scale[ch0..][..CH].try_into().unwrap();
                    let dg: &[f64; CH] = dgamma[ch0..][..CH].try_into().unwrap();
                    let db: &[f64; CH] = dbeta[ch0..][..CH].try_into().unwrap();
                    for dh in 0..spec.kernel_h {
                        let ih = oh * spec.stride_h + dh;
                        if ih >= h {
                            break;
                        }
                        for dw in 0..spec.kernel_w {
                            let iw = ow * spec.stride_w + dw;
                            if iw >= w {
                                break;
                            }
                            let base = ((b * h + ih) * w + iw) * c + ch0;
                            let px: &mut [f64; CH] =
                                (&mut xd[base..base + CH]).try_into().unwrap();
                            for l in 0..CH {
                                let xv = px[l];
                                let pre = xv.mul_add(av[l], bv[l]);
                                let won = base + l == bxv[l] && pre > 0.0;
                                let g = if won { n * pgv[l] } else { 0.0 };
                                let xh = (xv - mv[l]) * sv[l];
                                px[l] = cv[l] * (g - db[l] - xh * dg[l]);
                            }
                        }
                    }
                    oi += CH;
                    ch0 += CH;
                }
                for k in ch0..c {
                    for dh in 0..spec.kernel_h {
                        let ih = oh * spec.stride_h + dh;
                        if ih >= h {
                            break;
                        }
                        for dw in 0..spec.kernel_w {
                            let iw = ow * spec.stride_w + dw;
                            if iw >= w {
                                break;
                            }
                            let idx = ((b * h + ih) * w + iw) * c + k;
                            let xv = xd[idx];
                            let pre = xv.mul_add(aff_a[k], aff_b[k]);
                            let won = idx == bx[oi] && pre > 0.0;
                            let g = if won { n * gp[oi] } else { 0.0 };
                            let xh = (xv - cache.mean[k]) * cache.inv_std[k];
                            xd[idx] = scale[k] * (g - dbeta[k] - xh * dgamma[k]);
                        }
                    }
                    oi += 1;
                }
            }
        }
    }

    Ok((
        cache.x,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

/// General path for overlapping or gapped pooling: scatter the pooled
/// gradient with [`pool::backward`], then run the batch-norm chain rule in
/// two passes over the scattered tensor.
fn backward_general(
    g_pooled: &Tensor,
    cache: BlockCache,
    params: &BatchNormParams,
    c: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let mut gu = pool::backward(g_pooled, &cache.pool)?;
    let n = (cache.x.len() / c) as f64;
    let (aff_a, aff_b) = affine_of(params, &cache.mean, &cache.inv_std);

    // Pass 1: dγ = Σ g·x̂ and dβ = Σ g over ReLU-surviving positions.
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (px, gpx) in cache.x.data().chunks_exact(c).zip(gu.data().chunks_exact(c)) {
        for k in 0..c {
            let pre = px[k].mul_add(aff_a[k], aff_b[k]);
            let g = if pre > 0.0 { gpx[k] } else { 0.0 };
            dgamma[k] += g * (px[k] - cache.mean[k]) * cache.inv_std[k];
            dbeta[k] += g;
        }
    }

    // Pass 2: rewrite the scattered gradient in place. Masked positions
    // still pick up the batch-coupling terms.
    let gamma = params.gamma.data();
    let scale: Vec<f64> = (0..c).map(|k| gamma[k] * cache.inv_std[k] / n).collect();
    for (px, gpx) in cache
        .x
        .data()
        .chunks_exact(c)
        .zip(gu.data_mut().chunks_exact_mut(c))
    {
        for k in 0..c {
            let pre = px[k].mul_add(aff_a[k], aff_b[k]);
            let g = if pre > 0.0 { gpx[k] } else { 0.0 };
            let xh = (px[k] - cache.mean[k]) * cache.inv_std[k];
            gpx[k] = scale[k] * (n * g - dbeta[k] - xh * dgamma[k]);
        }
    }

    Ok((
        gu,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}
