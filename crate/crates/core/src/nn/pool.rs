//! Max pooling with ceil-mode output and argmax routing for the backward
//! pass.
//!
//! Output size is `ceil(dim / stride)`; windows hanging over the edge treat
//! the missing taps as −∞, so they never win. Ties go to the first element
//! in row-major scan order, and the winner's flat index is recorded so the
//! backward pass can route each gradient to exactly one input.

use crate::error::{Error, Result};
use crate::nn::PoolLayerSpec;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Flat input index of the selected maximum, one per output element.
    pub argmax: Vec<usize>,
    pub input_shape: Vec<usize>,
}

/// Channel-chunk width of the vectorized scan; all production channel
/// counts are multiples of it.
const CH: usize = 8;

/// `input [B,H,W,C] → (output [B,H',W',C], cache)`.
pub fn forward(input: &Tensor, spec: &PoolLayerSpec) -> Result<(Tensor, PoolCache)> {
    if input.rank() != 4 {
        return Err(Error::ShapeMismatch {
            context: "max pool input must be [batch, h, w, channels]",
            left: input.shape().to_vec(),
            right: vec![4],
        });
    }
    let [batch, h, w, c] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let (oh_dim, ow_dim) = spec.out_size(h, w);
    let mut out = Tensor::zeros(&[batch, oh_dim, ow_dim, c])?;
    let mut argmax = vec![0usize; out.len()];

    let dims = Dims { batch, h, w, c, oh_dim, ow_dim };
    if c % CH == 0 {
        forward_lanes(input.data(), out.data_mut(), &mut argmax, spec, &dims);
    } else {
        forward_ref(input.data(), out.data_mut(), &mut argmax, spec, &dims);
    }

    Ok((
        out,
        PoolCache {
            argmax,
            input_shape: input.shape().to_vec(),
        },
    ))
}

struct Dims {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    oh_dim: usize,
    ow_dim: usize,
}

/// Channels scan in fixed 8-wide chunks: the running max and its index
/// update as branch-free compare/selects the compiler can keep in vector
/// registers across taps.
fn forward_lanes(x: &[f64], o: &mut [f64], argmax: &mut [usize], spec: &PoolLayerSpec, d: &Dims) {
    let Dims { h, w, c, .. } = *d;
    let mut oi = 0;
    for b in 0..d.batch {
        for oh in 0..d.oh_dim {
            for ow in 0..d.ow_dim {
                for ch0 in (0..c).step_by(CH) {
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
                            let px: &[f64; CH] = x[base..][..CH].try_into().unwrap();
                            for l in 0..CH {
                                // Strictly greater keeps the first maximum
                                // seen in row-major order on ties.
                                let take = px[l] > best[l];
                                best[l] = if take { px[l] } else { best[l] };
                                bidx[l] = if take { base + l } else { bidx[l] };
                            }
                        }
                    }
                    o[oi..oi + CH].copy_from_slice(&best);
                    argmax[oi..oi + CH].copy_from_slice(&bidx);
                    oi += CH;
                }
            }
        }
    }
}

fn forward_ref(x: &[f64], o: &mut [f64], argmax: &mut [usize], spec: &PoolLayerSpec, d: &Dims) {
    let Dims { h, w, c, .. } = *d;
    let mut oi = 0;
    for b in 0..d.batch {
        for oh in 0..d.oh_dim {
            for ow in 0..d.ow_dim {
                for k in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
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
                            // Strictly greater keeps the first maximum seen
                            // in row-major order on ties.
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    o[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
}

/// Routes each output gradient back to the input position that won the max.
pub fn backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::ShapeMismatch {
            context: "max pool grad_out",
            left: grad_out.shape().to_vec(),
            right: vec![cache.argmax.len()],
        });
    }
    let mut grad_in = Tensor::zeros(&cache.input_shape)?;
    let gi = grad_in.data_mut();
    for (&src, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[src] += g;
    }
    Ok(grad_in)
}
