//! The network: depthwise convolutions, batch norm, max pooling, dense
//! layers, ReLU, dropout, and softmax cross-entropy, each with a hand-written
//! backward pass.
//!
//! Layer order is fixed: three blocks of conv → batch norm → ReLU → max
//! pool, then flatten, three dense layers (each ReLU + dropout), and a final
//! dense layer of `m` logits fed to softmax. Convolutions use
//! resolution-preserving zero padding, so only the pools shrink the map:
//! 6×204 → 2×68 → 1×34 → 1×17 regardless of the channel count.
//!
//! All activations are `[batch, height, width, channels]`, row-major.

pub mod activation;
pub mod batchnorm;
pub mod block;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod network;
pub mod pool;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// One depthwise convolution: every input channel is filtered independently
/// by `depth_multiplier` kernels, so `C` channels become `C · M` with no
/// cross-channel mixing. Padding always preserves the spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub depth_multiplier: usize,
}

/// Max pooling with ceil-mode output size; stride defaults to the kernel
/// (non-overlapping windows). Taps falling outside the input act as −∞.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayerSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl PoolLayerSpec {
    /// Non-overlapping pool: stride equal to the kernel.
    pub fn square(kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            kernel_h,
            kernel_w,
            stride_h: kernel_h,
            stride_w: kernel_w,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride_h), w.div_ceil(self.stride_w))
    }
}

/// A fully connected layer plus the keep probability of the dropout applied
/// after its activation (1.0 = no dropout).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseLayerSpec {
    pub units: usize,
    pub keep_prob: f64,
}

/// Complete architecture description; [`NetworkSpec::standard`] builds the
/// production layout, tests shrink the fields for fast gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_h: usize,
    pub input_w: usize,
    /// Input channels = number of stacked sensors N.
    pub channels: usize,
    pub conv: [ConvLayerSpec; 3],
    pub pool: [PoolLayerSpec; 3],
    pub dense: [DenseLayerSpec; 3],
    /// Output classes m.
    pub output_units: usize,
}

impl NetworkSpec {
    /// The production architecture for `channels` stacked sensors and
    /// `output_units` activity classes: kernels 3×5 / 2×4 / 2×2 with depth
    /// multipliers 8 / 4 / 2, pools 3×3 / 2×2 / 3×2, dense 500/250/125 at
    /// keep probability 0.5.
    pub fn standard(channels: usize, output_units: usize) -> Self {
        Self {
            input_h: 6,
            input_w: 204,
            channels,
            conv: [
                ConvLayerSpec { kernel_h: 3, kernel_w: 5, depth_multiplier: 8 },
                ConvLayerSpec { kernel_h: 2, kernel_w: 4, depth_multiplier: 4 },
                ConvLayerSpec { kernel_h: 2, kernel_w: 2, depth_multiplier: 2 },
            ],
            pool: [
                PoolLayerSpec::square(3, 3),
                PoolLayerSpec::square(2, 2),
                PoolLayerSpec::square(3, 2),
            ],
            dense: [
                DenseLayerSpec { units: 500, keep_prob: 0.5 },
                DenseLayerSpec { units: 250, keep_prob: 0.5 },
                DenseLayerSpec { units: 125, keep_prob: 0.5 },
            ],
            output_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input_h,
            self.input_w,
            self.channels,
            self.output_units,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidTrainConfig {
                reason: "network dimensions must be positive".into(),
            });
        }
        for c in &self.conv {
            if c.kernel_h == 0 || c.kernel_w == 0 || c.depth_multiplier == 0 {
                return Err(Error::InvalidTrainConfig {
                    reason: "conv kernel dims and depth multiplier must be ≥ 1".into(),
                });
            }
        }
        for p in &self.pool {
            if p.kernel_h == 0 || p.kernel_w == 0 || p.stride_h == 0 || p.stride_w == 0 {
                return Err(Error::InvalidTrainConfig {
                    reason: "pool kernel dims and strides must be ≥ 1".into(),
                });
            }
        }
        for d in &self.dense {
            if d.units == 0 {
                return Err(Error::InvalidTrainConfig {
                    reason: "dense units must be ≥ 1".into(),
                });
            }
            if !(d.keep_prob > 0.0 && d.keep_prob <= 1.0) {
                return Err(Error::InvalidTrainConfig {
                    reason: format!("keep_prob {} outside (0, 1]", d.keep_prob),
                });
            }
        }
        Ok(())
    }

    /// Channel count entering conv block `i` (0-based).
    pub fn channels_into(&self, block: usize) -> usize {
        let mut c = self.channels;
        for conv in &self.conv[..block] {
            c *= conv.depth_multiplier;
        }
        c
    }

    /// Channel count after the last conv block.
    pub fn channels_out(&self) -> usize {
        self.channels_into(3)
    }

    /// Spatial size after each pool, starting from the input:
    /// `[(input_h, input_w), after pool1, after pool2, after pool3]`.
    pub fn spatial_trace(&self) -> [(usize, usize); 4] {
        let mut trace = [(self.input_h, self.input_w); 4];
        let (mut h, mut w) = (self.input_h, self.input_w);
        for (i, pool) in self.pool.iter().enumerate() {
            (h, w) = pool.out_size(h, w);
            trace[i + 1] = (h, w);
        }
        trace
    }

    /// Length of the flattened vector between pool3 and the first dense
    /// layer.
    pub fn flatten_len(&self) -> usize {
        let (h, w) = self.spatial_trace()[3];
        h * w * self.channels_out()
    }

    /// `[D, U]` weight shapes of the four dense layers (three hidden + the
    /// output layer).
    pub fn dense_dims(&self) -> [(usize, usize); 4] {
        let d0 = self.flatten_len();
        [
            (d0, self.dense[0].units),
            (self.dense[0].units, self.dense[1].units),
            (self.dense[1].units, self.dense[2].units),
            (self.dense[2].units, self.output_units),
        ]
    }
}

/// Per-channel Σx and Σx² of a `[B,H,W,C]` activation, plus the number of
/// values per channel. The conv forward can accumulate these while its
/// output rows are still cache-resident, sparing batch norm a separate
/// statistics pass over a tensor that no longer fits any cache.
#[derive(Debug, Clone)]
pub struct ChannelMoments {
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
    /// Values per channel: batch · height · width.
    pub n: usize,
}

impl ChannelMoments {
    pub fn zeros(channels: usize, n: usize) -> Self {
        Self {
            sum: vec![0.0; channels],
            sumsq: vec![0.0; channels],
            n,
        }
    }

    /// Measures a `[B,H,W,C]` tensor in a pass of its own — the fallback for
    /// callers that didn't accumulate at the producer.
    pub fn measure(t: &Tensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::ShapeMismatch {
                context: "channel moments need a [batch, h, w, channels] tensor",
                left: t.shape().to_vec(),
                right: vec![4],
            });
        }
        let c = t.shape()[3];
        let mut m = Self::zeros(c, t.len() / c);
        for px in t.data().chunks_exact(c) {
            for ((s, q), &v) in m.sum.iter_mut().zip(&mut m.sumsq).zip(px) {
                *s += v;
                *q = v.mul_add(v, *q);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[kernel_h, kernel_w, in_channels, depth_multiplier]`.
    pub weights: Tensor,
    /// One bias per output channel (`in_channels · depth_multiplier`).
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `[in_features, units]`.
    pub weights: Tensor,
    pub bias: Tensor,
}

/// All learned parameters plus the seed that keys dropout substreams.
/// Batch-norm running statistics live here too, updated by training-mode
/// forward passes and read back at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub conv: Vec<ConvParams>,
    pub bn: Vec<BatchNormParams>,
    pub dense: Vec<DenseParams>,
    /// Root seed for dropout masks; masks are derived per training step so
    /// a resumed run replays the identical sequence.
    pub seed: u64,
}

impl NetworkState {
    /// Fresh parameters: He-uniform weights scaled by fan-in (the ReLU
    /// convention), zero biases, gamma 1 / beta 0, running stats (0, 1).
    /// Draws come from the seed's "init" substream in fixed layer order, so
    /// the same seed always gives the same starting point.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::substream(seed, "init", 0);
        let mut he_uniform = |shape: &[usize], fan_in: usize| -> Result<Tensor> {
            let limit = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
        };

        let mut conv = Vec::with_capacity(3);
        let mut bn = Vec::with_capacity(3);
        for (i, c) in spec.conv.iter().enumerate() {
            let c_in = spec.channels_into(i);
            let c_out = c_in * c.depth_multiplier;
            // Each depthwise filter sees kernel_h·kernel_w inputs of a single
            // channel, which is its fan-in.
            let weights = he_uniform(
                &[c.kernel_h, c.kernel_w, c_in, c.depth_multiplier],
                c.kernel_h * c.kernel_w,
            )?;
            conv.push(ConvParams {
                weights,
                bias: Tensor::zeros(&[c_out])?,
            });
            bn.push(BatchNormParams {
                gamma: Tensor::full(&[c_out], 1.0)?,
                beta: Tensor::zeros(&[c_out])?,
                running_mean: Tensor::zeros(&[c_out])?,
                running_var: Tensor::full(&[c_out], 1.0)?,
            });
        }

        let mut dense = Vec::with_capacity(4);
        for (d, u) in spec.dense_dims() {
            dense.push(DenseParams {
                weights: he_uniform(&[d, u], d)?,
                bias: Tensor::zeros(&[u])?,
            });
        }

        Ok(Self {
            conv,
            bn,
            dense,
            seed,
        })
    }

    /// Trainable parameters in canonical order, paired with diagnostic
    /// names. The optimizer walks this list; its order must match
    /// [`network::Gradients::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{}.weights", i + 1), &mut c.weights));
            out.push((format!("conv{}.bias", i + 1), &mut c.bias));
        }
        for (i, b) in self.bn.iter_mut().enumerate() {
            out.push((format!("bn{}.gamma", i + 1), &mut b.gamma));
            out.push((format!("bn{}.beta", i + 1), &mut b.beta));
        }
        for (i, d) in self.dense.iter_mut().enumerate() {
            out.push((format!("dense{}.weights", i + 1), &mut d.weights));
            out.push((format!("dense{}.bias", i + 1), &mut d.bias));
        }
        out
    }
}
