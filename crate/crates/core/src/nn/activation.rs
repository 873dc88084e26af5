//! ReLU and inverted dropout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// Clamps negatives in place. The conv-block activations are tens of
/// megabytes per batch, so the network's hot paths rewrite instead of copy.
pub fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
}

/// Gradient of ReLU given the pre-activation input. The subgradient at
/// exactly zero is defined as 0.
pub fn relu_backward(grad_out: &Tensor, pre_activation: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != pre_activation.shape() {
        return Err(Error::ShapeMismatch {
            context: "relu backward",
            left: grad_out.shape().to_vec(),
            right: pre_activation.shape().to_vec(),
        });
    }
    Ok(Tensor::from_vec(
        grad_out.shape(),
        grad_out
            .data()
            .iter()
            .zip(pre_activation.data())
            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )?)
}

/// As [`relu_backward`], but masking against the *post*-activation output
/// (`out > 0 ⟺ pre > 0`, and suppressed positions carry no gradient either
/// way) and rewriting the gradient in place.
pub fn relu_backward_in_place(grad: &mut Tensor, activated: &Tensor) -> Result<()> {
    if grad.shape() != activated.shape() {
        return Err(Error::ShapeMismatch {
            context: "relu backward",
            left: grad.shape().to_vec(),
            right: activated.shape().to_vec(),
        });
    }
    for (g, &a) in grad.data_mut().iter_mut().zip(activated.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Inverted dropout: each unit survives with probability `keep_prob` and is
/// scaled by `1/keep_prob`, so the expected activation is unchanged and
/// inference is the identity. Returns the output and, in train mode, the
/// mask of applied factors (0 or `1/keep_prob`) for the backward pass.
pub fn dropout(
    t: &Tensor,
    keep_prob: f64,
    rng: &mut ChaCha8Rng,
    mode: DropoutMode,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::InvalidTrainConfig {
            reason: format!("keep_prob {keep_prob} outside (0, 1]"),
        });
    }
    if mode == DropoutMode::Infer || keep_prob == 1.0 {
        return Ok((t.clone(), None));
    }
    let inv = 1.0 / keep_prob;
    let mask = Tensor::from_vec(
        t.shape(),
        (0..t.len())
            .map(|_| if rng.random::<f64>() < keep_prob { inv } else { 0.0 })
            .collect(),
    )?;
    Ok((t.mul(&mask)?, Some(mask)))
}

/// Backward through dropout is a multiply by the saved mask; with no mask
/// (inference or keep 1.0) the gradient passes through unchanged.
pub fn dropout_backward(grad_out: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => grad_out.mul(m),
        None => Ok(grad_out.clone()),
    }
}
