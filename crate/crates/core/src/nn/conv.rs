//! Depthwise 2-D convolution, forward and backward.
//!
//! Each input channel `c` is convolved with its own `depth_multiplier`
//! kernels; feature map `j` of channel `c` lands at output channel
//! `c · M + j`. There is no mixing across channels. Zero padding preserves
//! the spatial size; for even kernel dims the extra padding row/column goes
//! to the bottom/right.
//!
//! The hot path first repeats every input pixel's channels `M`-fold so the
//! input shares the output's lane layout (`lane c·M+j` holds `x[c]`). The
//! kernel weights already live in that layout (`[tap][c·M+j]`), so each tap
//! becomes one contiguous fused multiply-add over lanes, and a pixel's
//! accumulator stays in registers across all taps instead of re-reading the
//! output per tap. The path applies whenever the lane count is a multiple
//! of eight; anything else (only exotic test shapes) falls back to the
//! reference nest.

use crate::error::{Error, Result};
use crate::nn::{ChannelMoments, ConvLayerSpec};
use crate::tensor::Tensor;

/// Top/left padding for a resolution-preserving kernel; the remainder
/// (larger for even sizes) implicitly falls bottom/right.
fn pad_before(k: usize) -> usize {
    (k - 1) / 2
}

/// Lane width of the vectorized tap loop: one 512-bit register of doubles.
const CH: usize = 8;

fn check_shapes(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize, usize)> {
    if input.rank() != 4 {
        return Err(Error::ShapeMismatch {
            context: "conv input must be [batch, h, w, channels]",
            left: input.shape().to_vec(),
            right: vec![4],
        });
    }
    let [b, h, w, c_in] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let expected_w = [spec.kernel_h, spec.kernel_w, c_in, spec.depth_multiplier];
    if weights.shape() != expected_w {
        return Err(Error::ShapeMismatch {
            context: "conv weights",
            left: weights.shape().to_vec(),
            right: expected_w.to_vec(),
        });
    }
    if bias.shape() != [c_in * spec.depth_multiplier] {
        return Err(Error::ShapeMismatch {
            context: "conv bias",
            left: bias.shape().to_vec(),
            right: vec![c_in * spec.depth_multiplier],
        });
    }
    Ok((b, h, w, c_in))
}

/// Geometry shared by the lane-expanded passes.
#[derive(Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    m: usize,
    kh: usize,
    kw: usize,
    pt: usize,
    pl: usize,
}

impl Geom {
    fn of(spec: &ConvLayerSpec, h: usize, w: usize, c_in: usize) -> Self {
        Geom {
            h,
            w,
            c_in,
            c_out: c_in * spec.depth_multiplier,
            m: spec.depth_multiplier,
            kh: spec.kernel_h,
            kw: spec.kernel_w,
            pt: pad_before(spec.kernel_h),
            pl: pad_before(spec.kernel_w),
        }
    }

    fn lanes_vectorize(&self) -> bool {
        self.c_out % CH == 0
    }

}

/// `d[l] = x[l] · w[l] + d[l]` over one lane chunk. The fixed-size array
/// arguments matter: they let the compiler drop bounds checks and fuse the
/// eight scalar ops into one vector FMA.
#[inline(always)]
fn fma_rmw(d: &mut [f64; CH], x: &[f64; CH], w: &[f64; CH]) {
    for l in 0..CH {
        d[l] = x[l].mul_add(w[l], d[l]);
    }
}

/// `acc[l] += x[l] * w[l]` over one lane chunk; LEN is a compile-time lane
/// count so the accumulator stays in a vector register.
#[inline(always)]
fn fma_lanes<const LEN: usize>(acc: &mut [f64; LEN], x: &[f64], w: &[f64]) {
    for l in 0..LEN {
        acc[l] = x[l].mul_add(w[l], acc[l]);
    }
}

/// `input [B,H,W,C] → output [B,H,W,C·M]`.
pub fn forward(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let (batch, h, w, c_in) = check_shapes(input, spec, weights, bias)?;
    let g = Geom::of(spec, h, w, c_in);

    let mut out = Tensor::zeros(&[batch, h, w, g.c_out])?;
    if g.lanes_vectorize() {
        forward_lanes(input, weights, bias, &g, out.data_mut(), None);
    } else {
        for px in out.data_mut().chunks_exact_mut(g.c_out) {
            px.copy_from_slice(bias.data());
        }
        forward_ref(input, spec, weights, &mut out, g.m);
    }
    Ok(out)
}

/// [`forward`] plus the per-channel Σ and Σ² of the produced output,
/// accumulated while rows are still cache-resident. The training path hands
/// these to batch norm so it can skip its own statistics pass.
pub fn forward_moments(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, ChannelMoments)> {
    let (batch, h, w, c_in) = check_shapes(input, spec, weights, bias)?;
    let g = Geom::of(spec, h, w, c_in);

    let mut out = Tensor::zeros(&[batch, h, w, g.c_out])?;
    let moments = if g.lanes_vectorize() {
        let mut m = ChannelMoments::zeros(g.c_out, batch * h * w);
        forward_lanes(input, weights, bias, &g, out.data_mut(), Some(&mut m));
        m
    } else {
        for px in out.data_mut().chunks_exact_mut(g.c_out) {
            px.copy_from_slice(bias.data());
        }
        forward_ref(input, spec, weights, &mut out, g.m);
        ChannelMoments::measure(&out)?
    };
    Ok((out, moments))
}

/// One channel-chunk of an image, repeated into output lanes and laid out
/// contiguously: `buf[(ih·w + iw)·CH + l] = img[ih, iw, (ch0+l)/m]`.
///
/// In this layout every kernel tap is a plain shifted elementwise
/// multiply-add between two dense streams, so the tap loops below carry no
/// per-pixel index arithmetic at all.
fn expand_chunk(g: &Geom, img: &[f64], ch0: usize, buf: &mut [f64]) {
    let mut chan = [0usize; CH];
    for (l, c) in chan.iter_mut().enumerate() {
        *c = (ch0 + l) / g.m;
    }
    for (px, dst) in img.chunks_exact(g.c_in).zip(buf.chunks_exact_mut(CH)) {
        for (slot, &c) in dst.iter_mut().zip(&chan) {
            *slot = px[c];
        }
    }
}

/// Copy one channel-chunk of a lane-space image into contiguous form:
/// `buf[(ih·w + iw)·CH + l] = img[ih, iw, ch0+l]`.
fn gather_chunk(c_out: usize, img: &[f64], ch0: usize, buf: &mut [f64]) {
    for (px, dst) in img.chunks_exact(c_out).zip(buf.chunks_exact_mut(CH)) {
        dst.copy_from_slice(&px[ch0..ch0 + CH]);
    }
}

/// The overlap of a shifted row: writing `dst[ow] += src[ow + shift] · w`
/// for `shift = dw − pl` touches `ow ∈ [max(0,−shift), w − max(0,shift))`.
fn shift_range(w: usize, dw: usize, pl: usize) -> (usize, usize) {
    (pl.saturating_sub(dw), (w + pl - dw).min(w))
}

fn forward_lanes(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    g: &Geom,
    out: &mut [f64],
    mut moments: Option<&mut ChannelMoments>,
) {
    let img_in = g.h * g.w * g.c_in;
    let img_out = g.h * g.w * g.c_out;
    let row = g.w * CH;
    let mut xch = vec![0.0; g.h * row];
    let mut acc_row = vec![0.0; row];
    let wgt = weights.data();
    let bs = bias.data();

    for (img, out_img) in input
        .data()
        .chunks_exact(img_in)
        .zip(out.chunks_exact_mut(img_out))
    {
        for ch0 in (0..g.c_out).step_by(CH) {
            expand_chunk(g, img, ch0, &mut xch);
            let bias_chunk: &[f64; CH] = bs[ch0..ch0 + CH].try_into().unwrap();
            let mut s = [0.0f64; CH];
            let mut q = [0.0f64; CH];
            for oh in 0..g.h {
                for px in acc_row.chunks_exact_mut(CH) {
                    px.copy_from_slice(bias_chunk);
                }
                let dh_lo = g.pt.saturating_sub(oh);
                let dh_hi = g.kh.min(g.h + g.pt - oh);
                for dh in dh_lo..dh_hi {
                    let x_row = &xch[(oh + dh - g.pt) * row..][..row];
                    let w_tap = &wgt[dh * g.kw * g.c_out..];
                    for dw in 0..g.kw {
                        let (lo, hi) = shift_range(g.w, dw, g.pl);
                        if lo >= hi {
                            continue;
                        }
                        let wv: &[f64; CH] =
                            w_tap[dw * g.c_out + ch0..][..CH].try_into().unwrap();
                        let n = (hi - lo) * CH;
                        let dst = &mut acc_row[lo * CH..][..n];
                        let src = &x_row[(lo + dw - g.pl) * CH..][..n];
                        for (d, x) in dst.chunks_exact_mut(CH).zip(src.chunks_exact(CH)) {
                            fma_rmw(d.try_into().unwrap(), x.try_into().unwrap(), wv);
                        }
                    }
                }
                let out_row = &mut out_img[oh * g.w * g.c_out..][..g.w * g.c_out];
                for (px, a) in out_row
                    .chunks_exact_mut(g.c_out)
                    .zip(acc_row.chunks_exact(CH))
                {
                    px[ch0..ch0 + CH].copy_from_slice(a);
                }
                if moments.is_some() {
                    for a in acc_row.chunks_exact(CH) {
                        let a: &[f64; CH] = a.try_into().unwrap();
                        for l in 0..CH {
                            s[l] += a[l];
                            q[l] = a[l].mul_add(a[l], q[l]);
                        }
                    }
                }
            }
            if let Some(m) = moments.as_deref_mut() {
                for l in 0..CH {
                    m.sum[ch0 + l] += s[l];
                    m.sumsq[ch0 + l] += q[l];
                }
            }
        }
    }
}

#[inline(always)]
fn forward_ref(input: &Tensor, spec: &ConvLayerSpec, weights: &Tensor, out: &mut Tensor, m: usize) {
    let [batch, h, w, c_in] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let c_out = c_in * m;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (pt, pl) = (pad_before(kh), pad_before(kw));
    let x = input.data();
    let wgt = weights.data();
    let o = out.data_mut();

    for b in 0..batch {
        for oh in 0..h {
            let out_row = &mut o[(b * h + oh) * w * c_out..][..w * c_out];
            for dh in 0..kh {
                // Negative indices wrap to huge values and fail the `< h` test.
                let ih = (oh + dh).wrapping_sub(pt);
                if ih >= h {
                    continue;
                }
                let in_row = &x[(b * h + ih) * w * c_in..][..w * c_in];
                let tap_row = &wgt[dh * kw * c_in * m..][..kw * c_in * m];
                for ow in 0..w {
                    let out_px = &mut out_row[ow * c_out..][..c_out];
                    for dw in 0..kw {
                        let iw = (ow + dw).wrapping_sub(pl);
                        if iw >= w {
                            continue;
                        }
                        let in_px = &in_row[iw * c_in..][..c_in];
                        let tap = &tap_row[dw * c_in * m..][..c_in * m];
                        for ((opx, &xv), wv) in out_px
                            .chunks_exact_mut(m)
                            .zip(in_px)
                            .zip(tap.chunks_exact(m))
                        {
                            for j in 0..m {
                                opx[j] += xv * wv[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of the forward pass. `grad_input` is skipped when
/// `need_grad_input` is false (the first layer's input gradient is never
/// used). Returns `(grad_input, grad_weights, grad_bias)`.
pub fn backward(
    grad_out: &Tensor,
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    need_grad_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    if input.rank() != 4 {
        return Err(Error::ShapeMismatch {
            context: "conv backward input must be [batch, h, w, channels]",
            left: input.shape().to_vec(),
            right: vec![4],
        });
    }
    let [batch, h, w, c_in] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let m = spec.depth_multiplier;
    let expected_w = [spec.kernel_h, spec.kernel_w, c_in, m];
    if weights.shape() != expected_w {
        return Err(Error::ShapeMismatch {
            context: "conv backward weights",
            left: weights.shape().to_vec(),
            right: expected_w.to_vec(),
        });
    }
    let c_out = c_in * m;
    if grad_out.shape() != [batch, h, w, c_out] {
        return Err(Error::ShapeMismatch {
            context: "conv grad_out",
            left: grad_out.shape().to_vec(),
            right: vec![batch, h, w, c_out],
        });
    }
    let g = Geom::of(spec, h, w, c_in);

    // Bias gradient: plain per-channel sum over batch and positions.
    let mut grad_bias = Tensor::zeros(&[c_out])?;
    {
        let gb = grad_bias.data_mut();
        for px in grad_out.data().chunks_exact(c_out) {
            for (acc, &v) in gb.iter_mut().zip(px) {
                *acc += v;
            }
        }
    }

    let mut grad_weights = Tensor::zeros(weights.shape())?;
    if g.lanes_vectorize() {
        grad_weights_lanes(grad_out, input, &g, grad_weights.data_mut());
    } else {
        grad_weights_ref(grad_out, input, spec, &mut grad_weights, m);
    }

    let grad_input = if need_grad_input {
        let mut gi = Tensor::zeros(input.shape())?;
        if g.lanes_vectorize() {
            grad_input_lanes(grad_out, weights, &g, gi.data_mut());
        } else {
            grad_input_ref(grad_out, weights, spec, &mut gi, m);
        }
        Some(gi)
    } else {
        None
    };

    Ok((grad_input, grad_weights, grad_bias))
}

/// dW[tap, lane] = Σ over images and valid positions of
/// `xrep[shifted px, lane] · grad_out[px, lane]` — the weight tensor's
/// `[kh,kw,c,j]` layout is exactly `[tap][lane]`, so accumulation lands in
/// place.
fn grad_weights_lanes(grad_out: &Tensor, input: &Tensor, g: &Geom, gw: &mut [f64]) {
    let img_in = g.h * g.w * g.c_in;
    let img_out = g.h * g.w * g.c_out;
    let row = g.w * CH;
    let mut xch = vec![0.0; g.h * row];
    let mut gch = vec![0.0; g.h * row];

    for (img, go_img) in input
        .data()
        .chunks_exact(img_in)
        .zip(grad_out.data().chunks_exact(img_out))
    {
        for ch0 in (0..g.c_out).step_by(CH) {
            expand_chunk(g, img, ch0, &mut xch);
            gather_chunk(g.c_out, go_img, ch0, &mut gch);
            for oh in 0..g.h {
                let g_row = &gch[oh * row..][..row];
                let dh_lo = g.pt.saturating_sub(oh);
                let dh_hi = g.kh.min(g.h + g.pt - oh);
                for dh in dh_lo..dh_hi {
                    let x_row = &xch[(oh + dh - g.pt) * row..][..row];
                    let gw_row = &mut gw[dh * g.kw * g.c_out..];
                    for dw in 0..g.kw {
                        let (lo, hi) = shift_range(g.w, dw, g.pl);
                        if lo >= hi {
                            continue;
                        }
                        let n = (hi - lo) * CH;
                        let gs = &g_row[lo * CH..][..n];
                        let xs = &x_row[(lo + dw - g.pl) * CH..][..n];
                        // Four rotating accumulators hide the FMA latency of
                        // the long position sweep.
                        let mut acc = [[0.0f64; CH]; 4];
                        let whole = n - n % (CH * 4);
                        for (gc, xc) in gs[..whole]
                            .chunks_exact(CH * 4)
                            .zip(xs[..whole].chunks_exact(CH * 4))
                        {
                            for t in 0..4 {
                                fma_lanes(&mut acc[t], &xc[t * CH..][..CH], &gc[t * CH..][..CH]);
                            }
                        }
                        for (t, (gc, xc)) in gs[whole..]
                            .chunks_exact(CH)
                            .zip(xs[whole..].chunks_exact(CH))
                            .enumerate()
                        {
                            fma_lanes(&mut acc[t], xc, gc);
                        }
                        for (l, slot) in gw_row[dw * g.c_out + ch0..][..CH].iter_mut().enumerate() {
                            *slot += acc.iter().map(|a| a[l]).sum::<f64>();
                        }
                    }
                }
            }
        }
    }
}

/// dX via the transposed stencil: accumulate `grad_out · w` over taps in
/// lane space, then fold each channel's `M` lanes back down.
fn grad_input_lanes(grad_out: &Tensor, weights: &Tensor, g: &Geom, gi: &mut [f64]) {
    let img_in = g.h * g.w * g.c_in;
    let img_out = g.h * g.w * g.c_out;
    let row = g.w * CH;
    let mut gch = vec![0.0; g.h * row];
    let mut acc_row = vec![0.0; row];
    let wgt = weights.data();

    for (gi_img, go_img) in gi
        .chunks_exact_mut(img_in)
        .zip(grad_out.data().chunks_exact(img_out))
    {
        for ch0 in (0..g.c_out).step_by(CH) {
            gather_chunk(g.c_out, go_img, ch0, &mut gch);
            let mut chan = [0usize; CH];
            for (l, c) in chan.iter_mut().enumerate() {
                *c = (ch0 + l) / g.m;
            }
            for ih in 0..g.h {
                acc_row.fill(0.0);
                // Taps whose output row exists: oh = ih − dh + pt ∈ [0, h).
                let dh_lo = (ih + g.pt + 1).saturating_sub(g.h);
                let dh_hi = g.kh.min(ih + g.pt + 1);
                for dh in dh_lo..dh_hi {
                    let g_row = &gch[(ih + g.pt - dh) * row..][..row];
                    let w_tap = &wgt[dh * g.kw * g.c_out..];
                    for dw in 0..g.kw {
                        // dst[iw] += src[ow]·w with ow = iw + pl − dw: the
                        // forward shift with source and destination swapped.
                        let (lo, hi) = shift_range(g.w, dw, g.pl);
                        if lo >= hi {
                            continue;
                        }
                        let wv: &[f64; CH] =
                            w_tap[dw * g.c_out + ch0..][..CH].try_into().unwrap();
                        let n = (hi - lo) * CH;
                        let dst = &mut acc_row[(lo + dw - g.pl) * CH..][..n];
                        let src = &g_row[lo * CH..][..n];
                        for (d, x) in dst.chunks_exact_mut(CH).zip(src.chunks_exact(CH)) {
                            fma_rmw(d.try_into().unwrap(), x.try_into().unwrap(), wv);
                        }
                    }
                }
                // Fold lanes c·M+j back to channel c.
                let gi_row = &mut gi_img[ih * g.w * g.c_in..][..g.w * g.c_in];
                for (px, a) in gi_row
                    .chunks_exact_mut(g.c_in)
                    .zip(acc_row.chunks_exact(CH))
                {
                    for (l, &c) in chan.iter().enumerate() {
                        px[c] += a[l];
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn grad_weights_ref(grad_out: &Tensor, input: &Tensor, spec: &ConvLayerSpec, gw: &mut Tensor, m: usize) {
    let [batch, h, w, c_in] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let c_out = c_in * m;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (pt, pl) = (pad_before(kh), pad_before(kw));
    let x = input.data();
    let g = grad_out.data();
    let gwd = gw.data_mut();

    for b in 0..batch {
        for oh in 0..h {
            let g_row = &g[(b * h + oh) * w * c_out..][..w * c_out];
            for dh in 0..kh {
                let ih = (oh + dh).wrapping_sub(pt);
                if ih >= h {
                    continue;
                }
                let in_row = &x[(b * h + ih) * w * c_in..][..w * c_in];
                let gw_row = &mut gwd[dh * kw * c_in * m..][..kw * c_in * m];
                for ow in 0..w {
                    let g_px = &g_row[ow * c_out..][..c_out];
                    for dw in 0..kw {
                        let iw = (ow + dw).wrapping_sub(pl);
                        if iw >= w {
                            continue;
                        }
                        let in_px = &in_row[iw * c_in..][..c_in];
                        let tap = &mut gw_row[dw * c_in * m..][..c_in * m];
                        for ((t, &xv), gv) in tap
                            .chunks_exact_mut(m)
                            .zip(in_px)
                            .zip(g_px.chunks_exact(m))
                        {
                            for j in 0..m {
                                t[j] += xv * gv[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn grad_input_ref(grad_out: &Tensor, weights: &Tensor, spec: &ConvLayerSpec, gi: &mut Tensor, m: usize) {
    let [batch, h, w, c_in] = [
        gi.shape()[0],
        gi.shape()[1],
        gi.shape()[2],
        gi.shape()[3],
    ];
    let c_out = c_in * m;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (pt, pl) = (pad_before(kh), pad_before(kw));
    let g = grad_out.data();
    let wgt = weights.data();
    let gid = gi.data_mut();

    // Same tap walk as forward, with the accumulation direction reversed:
    // every output position scatters back into the inputs it read.
    for b in 0..batch {
        for oh in 0..h {
            let g_row = &g[(b * h + oh) * w * c_out..][..w * c_out];
            for dh in 0..kh {
                let ih = (oh + dh).wrapping_sub(pt);
                if ih >= h {
                    continue;
                }
                let gi_row = &mut gid[(b * h + ih) * w * c_in..][..w * c_in];
                let tap_row = &wgt[dh * kw * c_in * m..][..kw * c_in * m];
                for ow in 0..w {
                    let g_px = &g_row[ow * c_out..][..c_out];
                    for dw in 0..kw {
                        let iw = (ow + dw).wrapping_sub(pl);
                        if iw >= w {
                            continue;
                        }
                        let gi_px = &mut gi_row[iw * c_in..][..c_in];
                        let tap = &tap_row[dw * c_in * m..][..c_in * m];
                        for ((gv, wv), gpx) in gi_px
                            .iter_mut()
                            .zip(tap.chunks_exact(m))
                            .zip(g_px.chunks_exact(m))
                        {
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += wv[j] * gpx[j];
                            }
                            *gv += acc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn spec(kh: usize, kw: usize, m: usize) -> ConvLayerSpec {
        ConvLayerSpec {
            kernel_h: kh,
            kernel_w: kw,
            depth_multiplier: m,
        }
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = Tensor::from_fn(&[1, 3, 4, 2], |idx| (idx[1] * 4 + idx[2]) as f64 + idx[3] as f64 * 0.5).unwrap();
        let weights = Tensor::full(&[1, 1, 2, 1], 1.0).unwrap();
        let bias = Tensor::zeros(&[2]).unwrap();
        let out = forward(&input, &spec(1, 1, 1), &weights, &bias).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn two_by_two_ones_kernel_anchors_top_left() {
        // [[1,2],[3,4]], one channel, all-ones 2×2 kernel: the even kernel
        // pads bottom/right, so each output sums the window anchored at the
        // output position.
        let input = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let weights = Tensor::full(&[2, 2, 1, 1], 1.0).unwrap();
        let bias = Tensor::zeros(&[1]).unwrap();
        let out = forward(&input, &spec(2, 2, 1), &weights, &bias).unwrap();
        assert_eq!(out.data(), &[10.0, 6.0, 7.0, 4.0]);
    }

    #[test]
    fn resolution_and_channel_contract() {
        let input = Tensor::zeros(&[1, 6, 204, 2]).unwrap();
        let weights = Tensor::zeros(&[3, 5, 2, 8]).unwrap();
        let bias = Tensor::zeros(&[16]).unwrap();
        let out = forward(&input, &spec(3, 5, 8), &weights, &bias).unwrap();
        assert_eq!(out.shape(), &[1, 6, 204, 16]);
    }

    #[test]
    fn bias_broadcasts_per_output_channel() {
        let input = Tensor::zeros(&[2, 2, 3, 1]).unwrap();
        let weights = Tensor::zeros(&[1, 1, 1, 2]).unwrap();
        let bias = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let out = forward(&input, &spec(1, 1, 2), &weights, &bias).unwrap();
        for px in out.data().chunks_exact(2) {
            assert_eq!(px, &[0.5, -1.5]);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let input = Tensor::zeros(&[1, 2, 2, 3]).unwrap();
        let weights = Tensor::zeros(&[2, 2, 2, 1]).unwrap();
        let bias = Tensor::zeros(&[2]).unwrap();
        assert!(forward(&input, &spec(2, 2, 1), &weights, &bias).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let input = Tensor::from_fn(&[2, 3, 4, 2], |idx| idx.iter().sum::<usize>() as f64).unwrap();
        let weights = Tensor::full(&[2, 2, 2, 2], 0.3).unwrap();
        let grad_out = Tensor::zeros(&[2, 3, 4, 4]).unwrap();
        let (gi, gw, gb) = backward(&grad_out, &input, &spec(2, 2, 2), &weights, true).unwrap();
        assert!(gi.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_backward_routes_grad_through() {
        let input = Tensor::from_fn(&[1, 2, 3, 1], |idx| idx[2] as f64).unwrap();
        let weights = Tensor::full(&[1, 1, 1, 1], 1.0).unwrap();
        let grad_out = Tensor::from_fn(&[1, 2, 3, 1], |idx| 1.0 + idx[1] as f64).unwrap();
        let (gi, _, gb) = backward(&grad_out, &input, &spec(1, 1, 1), &weights, true).unwrap();
        assert_eq!(gi.unwrap(), grad_out);
        assert_eq!(gb.data(), &[grad_out.sum()]);
    }

    #[test]
    fn grad_weights_matches_hand_computation() {
        // 1×2 kernel over a 1×3 single-channel row: dW[0] = Σ g·x at the
        // aligned tap, dW[1] = Σ g·x shifted by one (right pad drops the
        // last product).
        let input = Tensor::from_vec(&[1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let weights = Tensor::from_vec(&[1, 2, 1, 1], vec![10.0, 20.0]).unwrap();
        let grad_out = Tensor::from_vec(&[1, 1, 3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        let (gi, gw, _) = backward(&grad_out, &input, &spec(1, 2, 1), &weights, true).unwrap();
        // forward: out[w] = x[w]*W0 + x[w+1]*W1 (x[3] = pad 0)
        assert_eq!(gw.data(), &[6.0, 5.0]);
        // dx[w] = g[w]*W0 + g[w-1]*W1
        assert_eq!(gi.unwrap().data(), &[10.0, 30.0, 30.0]);
    }

    #[test]
    fn accumulated_moments_match_a_direct_measure() {
        let mut rng = substream(43, "conv-moments", 0);
        let input = Tensor::from_fn(&[3, 4, 9, 2], |_| rng.random_range(-2.0..2.0)).unwrap();
        let weights = Tensor::from_fn(&[2, 3, 2, 4], |_| rng.random_range(-1.0..1.0)).unwrap();
        let bias = Tensor::from_fn(&[8], |_| rng.random_range(-0.5..0.5)).unwrap();
        let (out, m) = forward_moments(&input, &spec(2, 3, 4), &weights, &bias).unwrap();
        assert_eq!(out, forward(&input, &spec(2, 3, 4), &weights, &bias).unwrap());

        let direct = crate::nn::ChannelMoments::measure(&out).unwrap();
        assert_eq!(m.n, direct.n);
        for k in 0..8 {
            // summation order differs between the two, so ulp-level drift is
            // expected
            assert!((m.sum[k] - direct.sum[k]).abs() < 1e-9, "sum {k}");
            assert!((m.sumsq[k] - direct.sumsq[k]).abs() < 1e-9, "sumsq {k}");
        }
    }

    /// The vector path (lane count divisible by 8) and the reference nest
    /// must agree bit-for-bit-close on random data, forward and backward.
    #[test]
    fn lane_path_matches_reference_nest() {
        let mut rng = substream(41, "conv-agree", 0);
        for (c_in, m, kh, kw) in [(1, 8, 3, 5), (2, 4, 2, 4), (4, 2, 2, 2), (8, 1, 3, 3)] {
            let sp = spec(kh, kw, m);
            let c_out = c_in * m;
            let shape_in = [2, 5, 12, c_in];
            let input = Tensor::from_fn(&shape_in, |_| rng.random_range(-2.0..2.0)).unwrap();
            let weights = Tensor::from_fn(&[kh, kw, c_in, m], |_| rng.random_range(-1.0..1.0)).unwrap();
            let bias = Tensor::from_fn(&[c_out], |_| rng.random_range(-0.5..0.5)).unwrap();

            let fast = forward(&input, &sp, &weights, &bias).unwrap();
            let mut slow = Tensor::zeros(fast.shape()).unwrap();
            for px in slow.data_mut().chunks_exact_mut(c_out) {
                px.copy_from_slice(bias.data());
            }
            forward_ref(&input, &sp, &weights, &mut slow, m);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "forward mismatch: {a} vs {b}");
            }

            let grad_out = Tensor::from_fn(fast.shape(), |_| rng.random_range(-1.0..1.0)).unwrap();
            let (gi_f, gw_f, _) = backward(&grad_out, &input, &sp, &weights, true).unwrap();
            let mut gw_s = Tensor::zeros(weights.shape()).unwrap();
            grad_weights_ref(&grad_out, &input, &sp, &mut gw_s, m);
            let mut gi_s = Tensor::zeros(&shape_in).unwrap();
            grad_input_ref(&grad_out, &weights, &sp, &mut gi_s, m);
            for (a, b) in gw_f.data().iter().zip(gw_s.data()) {
                assert!((a - b).abs() < 1e-10, "grad_weights mismatch: {a} vs {b}");
            }
            for (a, b) in gi_f.unwrap().data().iter().zip(gi_s.data()) {
                assert!((a - b).abs() < 1e-10, "grad_input mismatch: {a} vs {b}");
            }
        }
    }
}
