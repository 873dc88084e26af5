//! Softmax + cross-entropy, fused so the gradient is the numerically clean
//! `(probs − onehot) / batch`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loss, logit gradients, and class probabilities for a batch.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean over the batch of −ln p\[label\].
    pub loss: f64,
    pub grad_logits: Tensor,
    pub probs: Tensor,
}

/// Log-sum-exp–stabilized softmax cross-entropy over `logits [B,m]`.
///
/// Each row is shifted by its maximum before exponentiation, so logits of
/// magnitude 1e4 neither overflow nor collapse; the log-probability of the
/// label is computed directly from the shifted logits rather than by taking
/// `ln` of the (possibly underflowed) probability.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    if logits.rank() != 2 {
        return Err(Error::ShapeMismatch {
            context: "softmax logits must be [batch, classes]",
            left: logits.shape().to_vec(),
            right: vec![2],
        });
    }
    let [batch, m] = [logits.shape()[0], logits.shape()[1]];
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            context: "softmax labels",
            left: vec![labels.len()],
            right: vec![batch],
        });
    }
    for &label in labels {
        if label >= m {
            return Err(Error::LabelOutOfRange { label, classes: m });
        }
    }

    let mut probs = Tensor::zeros(&[batch, m])?;
    let mut grad = Tensor::zeros(&[batch, m])?;
    let mut loss = 0.0;
    let inv_b = 1.0 / batch as f64;

    for (b, row) in logits.data().chunks_exact(m).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let p_row = &mut probs.data_mut()[b * m..][..m];
        for (p, &z) in p_row.iter_mut().zip(row) {
            *p = (z - max).exp();
            sum += *p;
        }
        let ln_sum = sum.ln();
        for p in p_row.iter_mut() {
            *p /= sum;
        }
        // −ln p[label] = ln Σ exp(z−max) − (z_label − max)
        loss += ln_sum - (row[labels[b]] - max);

        let g_row = &mut grad.data_mut()[b * m..][..m];
        g_row.copy_from_slice(&probs.data()[b * m..][..m]);
        g_row[labels[b]] -= 1.0;
        for g in g_row.iter_mut() {
            *g *= inv_b;
        }
    }

    Ok(LossOutput {
        loss: loss * inv_b,
        grad_logits: grad,
        probs,
    })
}

/// Index of the largest logit per row (ties: first).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let m = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks_exact(m)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_m() {
        let logits = Tensor::full(&[2, 3], 0.7).unwrap();
        let out = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
        assert!((out.loss - 3.0f64.ln()).abs() < 1e-12);
        for &p in out.probs.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one_even_at_extreme_logits() {
        let logits = Tensor::from_vec(
            &[3, 3],
            vec![1e4, 0.0, -1e4, -1e4, -1e4, -1e4, 5.0, 1e4, 1e4],
        )
        .unwrap();
        let out = softmax_cross_entropy(&logits, &[0, 1, 2]).unwrap();
        for row in out.probs.data().chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
            assert!(row.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn dominant_correct_logit_has_near_zero_loss() {
        let logits = Tensor::from_vec(&[1, 3], vec![1e4, 0.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert!(out.loss.is_finite());
    }

    #[test]
    fn dominant_wrong_logit_costs_the_gap() {
        let logits = Tensor::from_vec(&[1, 2], vec![1e4, 0.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[1]).unwrap();
        // −ln p[1] ≈ z0 − z1 = 1e4
        assert!((out.loss - 1e4).abs() < 1e-6);
    }

    #[test]
    fn gradient_is_probs_minus_onehot_over_batch() {
        let logits = Tensor::from_vec(&[2, 2], vec![0.3, -0.2, 1.0, 1.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[1, 0]).unwrap();
        for b in 0..2 {
            for k in 0..2 {
                let onehot = if (b == 0 && k == 1) || (b == 1 && k == 0) { 1.0 } else { 0.0 };
                let expect = (out.probs.at(&[b, k]) - onehot) / 2.0;
                assert!((out.grad_logits.at(&[b, k]) - expect).abs() < 1e-15);
            }
        }
        // gradient rows sum to zero (softmax shift invariance)
        for row in out.grad_logits.data().chunks_exact(2) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Tensor::zeros(&[1, 3]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn argmax_breaks_ties_toward_first() {
        let logits = Tensor::from_vec(&[2, 3], vec![1.0, 3.0, 3.0, -5.0, -5.0, -7.0]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 0]);
    }
}
