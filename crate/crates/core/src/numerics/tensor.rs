use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

/// Sentinel used to block logits and attention scores before a softmax.
pub const MASK_VALUE: f64 = -1e9;

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<R> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![R::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: R) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: R) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(
            shape.to_vec(),
            values.iter().map(|&v| R::from_f64_lossy(v)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| S::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> R {
        self.data[flat_index(&self.shape, index)]
    }

    /// Rows of the trailing axis, i.e. the tensor viewed as `[len / last, last]`.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, R> {
        let last = self.shape.last().copied().unwrap_or(1).max(1);
        self.data.chunks_exact(last)
    }
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), index.len());
    index
        .iter()
        .zip(shape)
        .fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis`.
///
/// Entries equal to the mask sentinel are accepted; any other non-finite input
/// is rejected.
pub fn softmax<R: Real>(logits: &Tensor<R>, axis: usize) -> Result<Tensor<R>> {
    if axis >= logits.rank() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for shape {:?}",
            logits.shape()
        )));
    }
    if let Some(pos) = logits.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "softmax input".into(),
            detail: format!("flat index {pos} = {}", logits.data()[pos]),
        });
    }
    let (outer, n, inner) = axis_extents(logits.shape(), axis);
    let mut out = logits.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mut max = R::neg_infinity();
            for j in 0..n {
                max = max.max(data[idx(j)]);
            }
            let mut sum = R::zero();
            for j in 0..n {
                let e = (data[idx(j)] - max).exp();
                data[idx(j)] = e;
                sum = sum + e;
            }
            for j in 0..n {
                data[idx(j)] = data[idx(j)] / sum;
            }
        }
    }
    Ok(out)
}

/// In-place softmax over contiguous rows of length `n`.
pub(crate) fn softmax_rows_inplace<R: Real>(data: &mut [R], n: usize) {
    for row in data.chunks_exact_mut(n) {
        let max = row.iter().fold(R::neg_infinity(), |m, &v| m.max(v));
        let mut sum = R::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = R::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
}

/// `[m, k] x [k, n]` product of plain row-major slices, accumulated into `out` when
/// `accumulate` is set.
pub(crate) fn gemm_nn<R: Real>(
    a: &[R],
    b: &[R],
    out: &mut [R],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let beta = if accumulate { R::one() } else { R::zero() };
    unsafe {
        R::gemm(
            m,
            k,
            n,
            R::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `a [m, k]` times the transpose of `b [n, k]`.
pub(crate) fn gemm_nt<R: Real>(
    a: &[R],
    b: &[R],
    out: &mut [R],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let beta = if accumulate { R::one() } else { R::zero() };
    unsafe {
        R::gemm(
            m,
            k,
            n,
            R::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Transpose of `a [k, m]` times `b [k, n]`.
pub(crate) fn gemm_tn<R: Real>(
    a: &[R],
    b: &[R],
    out: &mut [R],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let beta = if accumulate { R::one() } else { R::zero() };
    unsafe {
        R::gemm(
            m,
            k,
            n,
            R::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}
