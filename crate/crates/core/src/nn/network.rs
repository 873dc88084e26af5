//! Whole-network forward and backward passes.
//!
//! Wiring is fixed by [`NetworkSpec`]: three conv → batch norm → ReLU → max
//! pool blocks, flatten, three dense+ReLU+dropout layers, and the output
//! dense layer producing logits. The train-mode forward returns every cache
//! the backward pass needs; inference shares no state and never mutates the
//! network.

use crate::error::{Error, Result};
use crate::nn::activation::{self, DropoutMode};
use crate::nn::block::{self, BlockCache};
use crate::nn::conv;
use crate::nn::dense;
use crate::nn::{NetworkSpec, NetworkState};
use crate::rng;
use crate::tensor::Tensor;

/// Per-layer intermediates captured by a train-mode forward pass.
#[derive(Clone)]
pub struct ForwardCaches {
    conv_inputs: Vec<Tensor>,
    /// One fused norm/activation/pool cache per conv block.
    blocks: Vec<BlockCache>,
    /// Shape of the pool3 output, for unflattening the dense gradient.
    conv_out_shape: Vec<usize>,
    dense_inputs: Vec<Tensor>,
    dense_relu_outputs: Vec<Tensor>,
    dropout_masks: Vec<Option<Tensor>>,
}

/// Parameter gradients, mirroring [`NetworkState`]'s layout.
pub struct Gradients {
    /// Per conv block: (weights, bias).
    pub conv: Vec<(Tensor, Tensor)>,
    /// Per batch norm: (gamma, beta).
    pub bn: Vec<(Tensor, Tensor)>,
    /// Per dense layer: (weights, bias).
    pub dense: Vec<(Tensor, Tensor)>,
}

impl Gradients {
    /// All-zero gradients shaped for `spec`, mostly useful as a starting
    /// point in tests and optimizer checks.
    pub fn zeros_like(spec: &NetworkSpec) -> Result<Gradients> {
        let mut conv = Vec::with_capacity(3);
        let mut bn = Vec::with_capacity(3);
        for (i, c) in spec.conv.iter().enumerate() {
            let c_in = spec.channels_into(i);
            conv.push((
                Tensor::zeros(&[c.kernel_h, c.kernel_w, c_in, c.depth_multiplier])?,
                Tensor::zeros(&[c_in * c.depth_multiplier])?,
            ));
            bn.push((
                Tensor::zeros(&[c_in * c.depth_multiplier])?,
                Tensor::zeros(&[c_in * c.depth_multiplier])?,
            ));
        }
        let mut dense = Vec::with_capacity(4);
        for (d, u) in spec.dense_dims() {
            dense.push((Tensor::zeros(&[d, u])?, Tensor::zeros(&[u])?));
        }
        Ok(Gradients { conv, bn, dense })
    }

    /// Gradient tensors named and ordered exactly like
    /// [`NetworkState::params_mut`], so optimizer code can zip the two.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.conv.iter().enumerate() {
            out.push((format!("conv{}.weights", i + 1), w));
            out.push((format!("conv{}.bias", i + 1), b));
        }
        for (i, (g, b)) in self.bn.iter().enumerate() {
            out.push((format!("bn{}.gamma", i + 1), g));
            out.push((format!("bn{}.beta", i + 1), b));
        }
        for (i, (w, b)) in self.dense.iter().enumerate() {
            out.push((format!("dense{}.weights", i + 1), w));
            out.push((format!("dense{}.bias", i + 1), b));
        }
        out
    }
}

fn check_input(spec: &NetworkSpec, batch: &Tensor) -> Result<usize> {
    let expect = [spec.input_h, spec.input_w, spec.channels];
    if batch.rank() != 4 || batch.shape()[1..] != expect {
        return Err(Error::ShapeMismatch {
            context: "network input must be [batch, input_h, input_w, channels]",
            left: batch.shape().to_vec(),
            right: expect.to_vec(),
        });
    }
    Ok(batch.shape()[0])
}

/// Training-mode forward pass for optimization step `step`.
///
/// Updates batch-norm running statistics and draws dropout masks from the
/// state's seed keyed by `(step, layer)` — replaying a step replays its
/// masks. Returns the logits and the caches for [`backward`].
pub fn forward_train(
    spec: &NetworkSpec,
    state: &mut NetworkState,
    batch: &Tensor,
    step: u64,
) -> Result<(Tensor, ForwardCaches)> {
    check_input(spec, batch)?;

    let mut caches = ForwardCaches {
        conv_inputs: Vec::with_capacity(3),
        blocks: Vec::with_capacity(3),
        conv_out_shape: Vec::new(),
        dense_inputs: Vec::with_capacity(4),
        dense_relu_outputs: Vec::with_capacity(3),
        dropout_masks: Vec::with_capacity(3),
    };

    let mut x = batch.clone();
    for i in 0..3 {
        // The conv kernel measures the batch-norm moments while its output
        // rows are still cache-hot; the fused tail consumes them without
        // another pass over the activations.
        let (conv_out, moments) =
            conv::forward_moments(&x, &spec.conv[i], &state.conv[i].weights, &state.conv[i].bias)?;
        caches.conv_inputs.push(x);
        let (pooled, bc) = block::forward(conv_out, &mut state.bn[i], &moments, &spec.pool[i])?;
        caches.blocks.push(bc);
        x = pooled;
    }

    caches.conv_out_shape = x.shape().to_vec();
    let batch_n = x.shape()[0];
    let mut x = x.reshape(&[batch_n, spec.flatten_len()])?;

    for i in 0..3 {
        let mut z = dense::forward(&x, &state.dense[i].weights, &state.dense[i].bias)?;
        caches.dense_inputs.push(x);
        activation::relu_in_place(&mut z);
        let mut rng = rng::substream(state.seed, "dropout", step * 3 + i as u64);
        let (dropped, mask) =
            activation::dropout(&z, spec.dense[i].keep_prob, &mut rng, DropoutMode::Train)?;
        caches.dense_relu_outputs.push(z);
        caches.dropout_masks.push(mask);
        x = dropped;
    }

    let logits = dense::forward(&x, &state.dense[3].weights, &state.dense[3].bias)?;
    caches.dense_inputs.push(x);
    logits.check_finite("network logits")?;
    Ok((logits, caches))
}

/// Inference-mode forward pass: running batch-norm statistics, no dropout,
/// no mutation. Works for any batch size ≥ 1.
pub fn forward_infer(spec: &NetworkSpec, state: &NetworkState, batch: &Tensor) -> Result<Tensor> {
    check_input(spec, batch)?;

    let mut x = batch.clone();
    for i in 0..3 {
        let conv_out = conv::forward(&x, &spec.conv[i], &state.conv[i].weights, &state.conv[i].bias)?;
        x = block::forward_infer(&conv_out, &state.bn[i], &spec.pool[i])?;
    }

    let batch_n = x.shape()[0];
    let mut x = x.reshape(&[batch_n, spec.flatten_len()])?;
    for i in 0..3 {
        let mut z = dense::forward(&x, &state.dense[i].weights, &state.dense[i].bias)?;
        activation::relu_in_place(&mut z);
        x = z;
    }
    let logits = dense::forward(&x, &state.dense[3].weights, &state.dense[3].bias)?;
    logits.check_finite("network logits")?;
    Ok(logits)
}

/// Backpropagates `grad_logits` through the cached forward pass and returns
/// gradients for every trainable parameter. The input gradient of conv1 is
/// not computed (nothing consumes it). Consumes the caches; the block
/// gradients are computed in place inside their cached activations.
pub fn backward(
    spec: &NetworkSpec,
    state: &NetworkState,
    mut caches: ForwardCaches,
    grad_logits: &Tensor,
) -> Result<Gradients> {
    let mut dense_grads: Vec<Option<(Tensor, Tensor)>> = vec![None, None, None, None];

    let (mut g, gw, gb) = dense::backward(grad_logits, &caches.dense_inputs[3], &state.dense[3].weights)?;
    dense_grads[3] = Some((gw, gb));

    for i in (0..3).rev() {
        let mut g_pre = activation::dropout_backward(&g, caches.dropout_masks[i].as_ref())?;
        activation::relu_backward_in_place(&mut g_pre, &caches.dense_relu_outputs[i])?;
        let (gx, gw, gb) = dense::backward(&g_pre, &caches.dense_inputs[i], &state.dense[i].weights)?;
        dense_grads[i] = Some((gw, gb));
        g = gx;
    }

    let mut g = g.reshape(&caches.conv_out_shape)?;
    let mut conv_grads: Vec<Option<(Tensor, Tensor)>> = vec![None, None, None];
    let mut bn_grads: Vec<Option<(Tensor, Tensor)>> = vec![None, None, None];

    for i in (0..3).rev() {
        let bc = caches.blocks.pop().expect("one block cache per conv layer");
        let (g_bn, g_gamma, g_beta) = block::backward(&g, bc, &state.bn[i])?;
        bn_grads[i] = Some((g_gamma, g_beta));
        let (g_in, gw, gb) = conv::backward(
            &g_bn,
            &caches.conv_inputs[i],
            &spec.conv[i],
            &state.conv[i].weights,
            i > 0,
        )?;
        conv_grads[i] = Some((gw, gb));
        if let Some(g_in) = g_in {
            g = g_in;
        }
    }

    Ok(Gradients {
        conv: conv_grads.into_iter().map(Option::unwrap).collect(),
        bn: bn_grads.into_iter().map(Option::unwrap).collect(),
        dense: dense_grads.into_iter().map(Option::unwrap).collect(),
    })
}
