//! Dense row-major `f64` tensors and the reverse-mode tape built on them.
//!
//! [`Tensor`] is a plain value type. Gradient bookkeeping lives on a
//! [`Tape`]: every differentiable operation is recorded there and
//! [`Tape::backward`] replays the recorded rules in reverse order.

mod broadcast;
mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, grad_check_many, primitive_suite, GradCheckReport, GRAD_TOLERANCE};
pub use tape::{Tape, Var};

pub(crate) use broadcast::{reduce_to_shape, zip_broadcast};
pub(crate) use kernels::gemm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that every dimension is positive and that
    /// the element count matches the shape. An empty shape is a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows. All rows must have the same width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!("item() on shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Row `i` of a matrix (or of the leading axis of any tensor).
    pub fn row(&self, i: usize) -> &[f64] {
        let width: usize = self.shape[1..].iter().product();
        &self.data[i * width..(i + 1) * width]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        zip_broadcast("add", self, other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        zip_broadcast("sub", self, other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        zip_broadcast("mul", self, other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map(|x| x + s)
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Matrix product. `self` may have any rank ≥ 2 (leading axes are folded
    /// into rows); `other` must be 2-D.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() < 2 || other.rank() != 2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let k = self.shape[self.rank() - 1];
        if k != other.shape[0] {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let m = self.len() / k;
        let n = other.shape[1];
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, false);
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        Ok(Tensor::from_parts(shape, out))
    }

    /// Batched product of `[B, m, k]` by `[B, k, n]`, or by `[B, n, k]`
    /// transposed when `trans_b` is set.
    pub fn bmm(&self, other: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (batch, m, k, n) = bmm_dims(&self.shape, &other.shape, trans_b)?;
        let mut out = vec![0.0; batch * m * n];
        for b in 0..batch {
            gemm(
                m,
                k,
                n,
                &self.data[b * m * k..(b + 1) * m * k],
                false,
                &other.data[b * k * n..(b + 1) * k * n],
                trans_b,
                &mut out[b * m * n..(b + 1) * m * n],
                false,
            );
        }
        Ok(Tensor::from_parts(vec![batch, m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!("transpose of rank {}", self.rank())));
        }
        self.permute(&[1, 0])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("bad permutation {perm:?} for rank {rank}")));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        // Trailing axes left in place are copied as contiguous blocks.
        let kept = (0..rank).rev().take_while(|&i| perm[i] == i).count();
        let outer_rank = rank - kept;
        let block: usize = self.shape[outer_rank..].iter().product();
        let src_strides: Vec<usize> = perm[..outer_rank].iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; outer_rank];
        let mut offset = 0usize;
        for _ in 0..self.len() / block {
            out.extend_from_slice(&self.data[offset..offset + block]);
            for ax in (0..outer_rank).rev() {
                idx[ax] += 1;
                offset += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// Sums over `axis` (or every axis when `None`).
    pub fn sum_axis(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        let Some(axis) = axis else {
            let shape = if keepdim { vec![1; self.rank()] } else { vec![] };
            return Ok(Tensor::from_parts(shape, vec![self.sum_all()]));
        };
        if axis >= self.rank() {
            return Err(Error::Shape(format!("axis {axis} out of range for {:?}", self.shape)));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &self.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(Tensor::from_parts(reduced_shape(&self.shape, axis, keepdim), out))
    }

    pub fn mean_axis(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        let count = match axis {
            Some(a) if a < self.rank() => self.shape[a],
            Some(_) => 1,
            None => self.len(),
        };
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / count as f64))
    }

    /// Softmax over the last axis, with the row maximum subtracted first.
    pub fn softmax(&self) -> Result<Tensor> {
        if self.data.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("NaN input to softmax".into()));
        }
        let width = *self.shape.last().unwrap_or(&1);
        let mut out = self.data.clone();
        for row in out.chunks_mut(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| x.max(0.0))
    }

    pub fn gelu(&self) -> Tensor {
        self.map(gelu)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact gelu: `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

pub(crate) fn bmm_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(usize, usize, usize, usize)> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
        return Err(Error::dim("bmm", a, b));
    }
    let (bk, n) = if trans_b { (b[2], b[1]) } else { (b[1], b[2]) };
    if a[2] != bk {
        return Err(Error::dim("bmm", a, b));
    }
    Ok((a[0], a[1], a[2], n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_identity_and_hand_values() {
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&b).unwrap(), b);

        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(a.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_rule_and_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 4]);
        assert_eq!(a.matmul(&b).unwrap().shape(), &[2, 4]);
        let err = a.matmul(&a).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_hand_values() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(x.add(&Tensor::scalar(0.0)).unwrap(), x);
        assert_eq!(Tensor::vector(vec![2.0, 4.0, 6.0]).mean_all(), 4.0);
        let p = Tensor::vector(vec![1.0, 2.0]).mul(&Tensor::vector(vec![3.0, 4.0])).unwrap();
        assert_eq!(p.data(), &[3.0, 8.0]);
        assert!(Tensor::zeros(&[2, 3]).add(&Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn softmax_cases() {
        let s = Tensor::vector(vec![0.0, 0.0]).softmax().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Tensor::vector(vec![0.0, 3f64.ln()]).softmax().unwrap();
        assert_abs_diff_eq!(s.data()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.data()[1], 0.75, epsilon = 1e-15);
        assert!(Tensor::vector(vec![f64::NAN, 1.0]).softmax().is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(Tensor::scalar(-2.0).relu().item().unwrap(), 0.0);
        assert_eq!(gelu(0.0), 0.0);
        assert_abs_diff_eq!(gelu(1.0), 0.8413, epsilon = 1e-4);
    }

    #[test]
    fn permute_round_trip() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), t.at(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn sum_axis_keepdim() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.sum_axis(Some(0), false).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(t.sum_axis(Some(1), true).unwrap().shape(), &[2, 1]);
        assert_eq!(t.sum_axis(None, false).unwrap().item().unwrap(), 10.0);
    }

    #[test]
    fn rejects_zero_dims_and_bad_lengths() {
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }
}
