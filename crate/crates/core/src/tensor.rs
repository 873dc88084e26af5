//! Minimal dense tensor type: row-major contiguous `f64` storage.
//!
//! This is deliberately small — just what the network and data pipeline
//! need. Shapes are validated at the boundaries and mismatches surface as
//! typed errors; the layer kernels then work on the raw slices.
//!
//! The three matmul orientations (`matmul`, [`Tensor::matmul_at`],
//! [`Tensor::matmul_bt`]) are cache-blocked because the first dense layer
//! multiplies against a weight matrix of several megabytes; a naive triple
//! loop spends its time waiting on memory.

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values. Rank is at least 1 and no
/// dimension may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    fn check_shape(shape: &[usize]) -> Result<()> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::ZeroDim {
                shape: shape.to_vec(),
            });
        }
        Ok(())
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        })
    }

    /// Wraps an existing buffer. The buffer length must equal the shape's
    /// element count.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::check_shape(shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "from_vec",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major
    /// order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        Self::check_shape(shape)?;
        let count: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f(&idx));
            // Row-major odometer: bump the last axis, carrying leftwards.
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: zero-sized dimensions are rejected at construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides, in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for ax in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[ax] = strides[ax + 1] * self.shape[ax + 1];
        }
        strides
    }

    /// Linear offset of a multi-index. Panics on rank or bounds violations;
    /// use only with indices already known to be valid.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (ax, (&i, &d)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(i < d, "index {i} out of bounds for axis {ax} (size {d})");
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::check_shape(shape)?;
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, rhs: &Self, context: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, "mul", |a, b| a * b)
    }

    /// Elementwise maximum; `max` against a zero tensor is ReLU.
    pub fn max(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, "max", f64::max)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_mut(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += alpha * rhs`, the optimizer's workhorse.
    pub fn add_scaled_mut(&mut self, alpha: f64, rhs: &Self) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                context: "add_scaled",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        kernels::axpy(&mut self.data, alpha, &rhs.data);
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn reduce_axis(&self, axis: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if axis >= self.shape.len() {
            return Err(Error::ShapeMismatch {
                context: "reduce_axis",
                left: self.shape.clone(),
                right: vec![axis],
            });
        }
        if self.shape.len() == 1 {
            let v = self.data.iter().fold(init, |acc, &x| f(acc, x));
            return Tensor::from_vec(&[1], vec![v]);
        }
        let outer: usize = self.shape[..axis].iter().product();
        let mid = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let mut out = vec![init; outer * inner];
        for o in 0..outer {
            for k in 0..mid {
                let src = &self.data[(o * mid + k) * inner..][..inner];
                let dst = &mut out[o * inner..][..inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = f(*d, s);
                }
            }
        }
        Tensor::from_vec(&out_shape, out)
    }

    /// Sum along one axis; the axis is removed from the shape (a rank-1
    /// input reduces to shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        self.reduce_axis(axis, 0.0, |a, b| a + b)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        let n = self.shape.get(axis).copied().unwrap_or(1) as f64;
        let mut t = self.sum_axis(axis)?;
        t.scale_mut(1.0 / n);
        Ok(t)
    }

    pub fn max_axis(&self, axis: usize) -> Result<Self> {
        self.reduce_axis(axis, f64::NEG_INFINITY, f64::max)
    }

    /// Errors if any element is `NaN` or infinite. `context` names the
    /// producing operation for the error message.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    fn matmul_dims(&self, rhs: &Self, context: &'static str, swap_a: bool, swap_b: bool) -> Result<(usize, usize, usize)> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(Error::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let (m, ka) = if swap_a {
            (self.shape[1], self.shape[0])
        } else {
            (self.shape[0], self.shape[1])
        };
        let (kb, n) = if swap_b {
            (rhs.shape[1], rhs.shape[0])
        } else {
            (rhs.shape[0], rhs.shape[1])
        };
        if ka != kb {
            return Err(Error::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        Ok((m, ka, n))
    }

    /// `self[m,k] × rhs[k,n] → [m,n]`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k, n) = self.matmul_dims(rhs, "matmul", false, false)?;
        let mut out = vec![0.0; m * n];
        let (a, b) = (self.data.as_slice(), rhs.data.as_slice());
        kernels::gemm(m, k, n, |i, kk| a[i * k + kk], |kk, j| b[kk * n + j], &mut out);
        Tensor::from_vec(&[m, n], out)
    }

    /// `selfᵀ[m,k] × rhs[k,n] → [m,n]` where `self` is stored as `[k,m]`.
    ///
    /// This is the gradient-of-weights orientation: activations enter as
    /// `[batch, features]` and are contracted over the batch axis without an
    /// explicit transpose.
    pub fn matmul_at(&self, rhs: &Self) -> Result<Self> {
        let (m, k, n) = self.matmul_dims(rhs, "matmul_at", true, false)?;
        let mut out = vec![0.0; m * n];
        let (a, b) = (self.data.as_slice(), rhs.data.as_slice());
        kernels::gemm(m, k, n, |i, kk| a[kk * m + i], |kk, j| b[kk * n + j], &mut out);
        Tensor::from_vec(&[m, n], out)
    }

    /// `self[m,k] × rhsᵀ[k,n] → [m,n]` where `rhs` is stored as `[n,k]`.
    ///
    /// The gradient-of-inputs orientation: the contraction runs along the
    /// contiguous axis of both operands.
    pub fn matmul_bt(&self, rhs: &Self) -> Result<Self> {
        let (m, k, n) = self.matmul_dims(rhs, "matmul_bt", false, true)?;
        let mut out = vec![0.0; m * n];
        let (a, b) = (self.data.as_slice(), rhs.data.as_slice());
        kernels::gemm(m, k, n, |i, kk| a[i * k + kk], |kk, j| b[j * k + kk], &mut out);
        Tensor::from_vec(&[m, n], out)
    }
}

/// Blocked matrix multiply shared by every orientation.
///
/// Operands are repacked into panel buffers so the register-tile kernel
/// always streams contiguous memory, whatever the caller's layout; the
/// accessor closures are monomorphized per call site and melt into plain
/// loads. Fringe tiles are zero-padded in the packs and clipped on the way
/// out, so only the store loop ever thinks about edges.
pub(crate) mod kernels {
    /// `y += a * x`.
    pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
        debug_assert_eq!(y.len(), x.len());
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += a * xi;
        }
    }

    /// Register tile: MR×NR accumulators live in vector registers across the
    /// whole k sweep. 4×16 doubles is eight 512-bit accumulators plus two
    /// operand vectors — measured fastest among the shapes that fit the
    /// register file (wider tiles spill and fall off a cliff).
    const MR: usize = 4;
    const NR: usize = 16;
    /// Cache blocks: the A panel (MC×KC) sits in L1/L2, the B panel (KC×NC)
    /// in L2/L3.
    const MC: usize = 64;
    const KC: usize = 256;
    const NC: usize = 1024;

    /// `out[m,n] += A[m,k] · B[k,n]` with `out` supplied by the caller
    /// (normally zeroed). `a_get`/`b_get` read logical `(row, col)` elements.
    pub fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a_get: impl Fn(usize, usize) -> f64,
        b_get: impl Fn(usize, usize) -> f64,
        out: &mut [f64],
    ) {
        debug_assert_eq!(out.len(), m * n);
        if m == 0 || k == 0 || n == 0 {
            return;
        }
        let kc_cap = KC.min(k);
        let nc_cap = NC.min(n);
        let mut apack = vec![0.0; MC.min(m).div_ceil(MR) * MR * kc_cap];
        let mut bpack = vec![0.0; nc_cap.div_ceil(NR) * NR * kc_cap];

        let mut n0 = 0;
        while n0 < n {
            let nc = NC.min(n - n0);
            let n_panels = nc.div_ceil(NR);
            let mut k0 = 0;
            while k0 < k {
                let kc = KC.min(k - k0);
                for jp in 0..n_panels {
                    let j_base = n0 + jp * NR;
                    let cols = NR.min(n - j_base);
                    let dst = &mut bpack[jp * kc_cap * NR..][..kc * NR];
                    for (kk, row) in dst.chunks_exact_mut(NR).enumerate() {
                        for (c, slot) in row[..cols].iter_mut().enumerate() {
                            *slot = b_get(k0 + kk, j_base + c);
                        }
                        row[cols..].fill(0.0);
                    }
                }
                let mut m0 = 0;
                while m0 < m {
                    let mc = MC.min(m - m0);
                    let m_panels = mc.div_ceil(MR);
                    for ip in 0..m_panels {
                        let i_base = m0 + ip * MR;
                        let rows = MR.min(m - i_base);
                        let dst = &mut apack[ip * kc_cap * MR..][..kc * MR];
                        for (kk, row) in dst.chunks_exact_mut(MR).enumerate() {
                            for (r, slot) in row[..rows].iter_mut().enumerate() {
                                *slot = a_get(i_base + r, k0 + kk);
                            }
                            row[rows..].fill(0.0);
                        }
                    }
                    for jp in 0..n_panels {
                        let j_base = n0 + jp * NR;
                        let cols = NR.min(n - j_base);
                        let bp = &bpack[jp * kc_cap * NR..][..kc * NR];
                        for ip in 0..m_panels {
                            let i_base = m0 + ip * MR;
                            let rows = MR.min(m - i_base);
                            let ap = &apack[ip * kc_cap * MR..][..kc * MR];
                            micro_tile(ap, bp, kc, out, i_base, j_base, rows, cols, n);
                        }
                    }
                    m0 += mc;
                }
                k0 += kc;
            }
            n0 += nc;
        }
    }

    /// One MR×NR register tile: accumulate over a packed k sweep, then add
    /// the live `rows × cols` region into `out`.
    #[inline(always)]
    fn micro_tile(
        ap: &[f64],
        bp: &[f64],
        kc: usize,
        out: &mut [f64],
        i_base: usize,
        j_base: usize,
        rows: usize,
        cols: usize,
        n: usize,
    ) {
        let mut acc = [[0.0f64; NR]; MR];
        for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(kc) {
            for r in 0..MR {
                let ar = a[r];
                for c in 0..NR {
                    acc[r][c] = ar.mul_add(b[c], acc[r][c]);
                }
            }
        }
        for r in 0..rows {
            let out_row = &mut out[(i_base + r) * n + j_base..][..cols];
            for (o, &v) in out_row.iter_mut().zip(&acc[r][..cols]) {
                *o += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_zero_dims_and_empty_shape() {
        assert!(Tensor::zeros(&[3, 0, 2]).is_err());
        assert!(Tensor::zeros(&[]).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        let t = Tensor::zeros(&[2, 3, 4]).unwrap();
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn from_fn_visits_row_major_order() {
        let t = Tensor::from_fn(&[2, 3], |idx| (idx[0] * 10 + idx[1]) as f64).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn elementwise_ops_and_mismatch() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 33.0, 44.0]);
        assert_eq!(b.sub(&a).unwrap().data(), &[9.0, 18.0, 27.0, 36.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[10.0, 40.0, 90.0, 160.0]);

        let neg = Tensor::from_vec(&[2, 2], vec![1.0, -2.0, -3.0, 4.0]).unwrap();
        let zero = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(neg.max(&zero).unwrap().data(), &[1.0, 0.0, 0.0, 4.0]);

        let c = Tensor::zeros(&[4]).unwrap();
        assert!(matches!(a.add(&c), Err(crate::Error::ShapeMismatch { .. })));
    }

    #[test]
    fn reductions_along_axes() {
        // [[1, 2, 3], [4, 5, 6]]
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.sum(), 21.0);
        assert_eq!(t.mean(), 3.5);
        assert_eq!(t.max_value(), 6.0);
        assert_eq!(t.sum_axis(0).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(t.sum_axis(1).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(t.mean_axis(0).unwrap().data(), &[2.5, 3.5, 4.5]);
        assert_eq!(t.max_axis(1).unwrap().data(), &[3.0, 6.0]);
        assert!(t.sum_axis(2).is_err());
    }

    #[test]
    fn check_finite_flags_nan_and_inf() {
        let mut t = Tensor::zeros(&[3]).unwrap();
        assert!(t.check_finite("test").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(matches!(
            t.check_finite("test"),
            Err(crate::Error::NonFinite { .. })
        ));
        t.data_mut()[1] = f64::INFINITY;
        assert!(t.check_finite("test").is_err());
    }

    #[test]
    fn matmul_small_known_answer() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[4, 2]).unwrap();
        assert!(a.matmul(&b).is_err());
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a.data()[i * k + kk] * b.data()[kk * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())))
    }

    proptest! {
        #[test]
        fn offset_matches_nested_vec_oracle(
            d0 in 1usize..5, d1 in 1usize..5, d2 in 1usize..5,
        ) {
            let t = Tensor::from_fn(&[d0, d1, d2], |idx| {
                (idx[0] * 100 + idx[1] * 10 + idx[2]) as f64
            }).unwrap();
            // Oracle: a literally nested Vec<Vec<Vec<f64>>>.
            let nested: Vec<Vec<Vec<f64>>> = (0..d0).map(|i| {
                (0..d1).map(|j| {
                    (0..d2).map(|k| (i * 100 + j * 10 + k) as f64).collect()
                }).collect()
            }).collect();
            for i in 0..d0 {
                for j in 0..d1 {
                    for k in 0..d2 {
                        prop_assert_eq!(t.at(&[i, j, k]), nested[i][j][k]);
                        let strides = t.strides();
                        prop_assert_eq!(
                            t.offset(&[i, j, k]),
                            i * strides[0] + j * strides[1] + k * strides[2]
                        );
                    }
                }
            }
        }

        #[test]
        fn blocked_matmuls_match_naive(
            m in 1usize..20, k in 1usize..40, n in 1usize..20,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::substream(seed, "matmul-prop", 0);
            let mut rand_t = |r: usize, c: usize| {
                Tensor::from_fn(&[r, c], |_| rng.random_range(-2.0..2.0)).unwrap()
            };
            let a = rand_t(m, k);
            let b = rand_t(k, n);
            let expect = naive_matmul(&a, &b);

            prop_assert!(close(a.matmul(&b).unwrap().data(), &expect));

            // Same product expressed through the transposed entry points.
            let a_t = Tensor::from_fn(&[k, m], |idx| a.at(&[idx[1], idx[0]])).unwrap();
            prop_assert!(close(a_t.matmul_at(&b).unwrap().data(), &expect));

            let b_t = Tensor::from_fn(&[n, k], |idx| b.at(&[idx[1], idx[0]])).unwrap();
            prop_assert!(close(a.matmul_bt(&b_t).unwrap().data(), &expect));
        }

        #[test]
        fn sum_axis_matches_manual(
            d0 in 1usize..6, d1 in 1usize..6, axis in 0usize..2,
        ) {
            let t = Tensor::from_fn(&[d0, d1], |idx| (idx[0] * 7 + idx[1] * 3) as f64).unwrap();
            let reduced = t.sum_axis(axis).unwrap();
            if axis == 0 {
                for j in 0..d1 {
                    let manual: f64 = (0..d0).map(|i| t.at(&[i, j])).sum();
                    prop_assert_eq!(reduced.data()[j], manual);
                }
            } else {
                for i in 0..d0 {
                    let manual: f64 = (0..d1).map(|j| t.at(&[i, j])).sum();
                    prop_assert_eq!(reduced.data()[i], manual);
                }
            }
        }
    }
}
