//! Fully connected layer over `[batch, features]` activations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x[B,D] × w[D,U] + bias[U] → [B,U]`.
pub fn forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.shape() != [weights.shape().last().copied().unwrap_or(0)] {
        return Err(Error::ShapeMismatch {
            context: "dense bias",
            left: bias.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    let mut out = x.matmul(weights)?;
    let u = bias.len();
    for row in out.data_mut().chunks_exact_mut(u) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_weights, grad_bias)`:
/// `grad_x = g·wᵀ`, `grad_w = xᵀ·g`, `grad_b = Σ_batch g`.
pub fn backward(
    grad_out: &Tensor,
    x: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let grad_x = grad_out.matmul_bt(weights)?;
    let grad_w = x.matmul_at(grad_out)?;
    let grad_b = grad_out.sum_axis(0)?;
    Ok((grad_x, grad_w, grad_b))
}
