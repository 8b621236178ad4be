//! Dense 4-D tensors and the differentiable primitives every network layer is
//! built from.
//!
//! Layout is `(n, c, h, w)`, row-major with `w` fastest. Every primitive comes
//! as a forward function plus a hand-derived backward function; there is no
//! tape. Composite layers chain the backward functions themselves.

mod conv;
mod gradcheck;
pub(crate) mod ops;

pub use conv::{
    conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward, ConvGrads, ConvSpec,
};
pub use gradcheck::{grad_check, grad_check_sampled, Coordinate, GradCheckReport, GradOp};
pub use ops::{
    add, add_backward, matmul, matmul_backward, mul, mul_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, softmax_rows, softmax_rows_backward,
};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{config_err, Result};

/// Scalar type a tensor can carry. Implemented for `f32` (training) and `f64`
/// (gradient verification).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Raw GEMM entry point: `C = alpha * A * B + beta * C` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping (for `c`)
    /// regions of the stated shapes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    /// Replaces every `v` in `xs` by `exp(v - shift)` and returns the sum.
    fn exp_shifted(xs: &mut [Self], shift: Self) -> Self {
        let mut total = Self::zero();
        for v in xs.iter_mut() {
            *v = (*v - shift).exp();
            total = total + *v;
        }
        total
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn exp_shifted(xs: &mut [f32], shift: f32) -> f32 {
        // Lane-wise partial sums keep the loop vectorisable; the reduction
        // order is fixed, so results stay deterministic.
        const LANES: usize = 8;
        let mut acc = [0.0f32; LANES];
        let mut chunks = xs.chunks_exact_mut(LANES);
        for chunk in &mut chunks {
            for (l, v) in chunk.iter_mut().enumerate() {
                *v = ops::exp_f32(*v - shift);
                acc[l] += *v;
            }
        }
        let mut total: f32 = acc.iter().sum();
        for v in chunks.into_remainder() {
            *v = ops::exp_f32(*v - shift);
            total += *v;
        }
        total
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major GEMM on slices: `C (m×n) = alpha * op(A) * op(B) + beta * C`.
///
/// `A` is stored `m×k` (or `k×m` when `trans_a`), `B` is stored `k×n` (or
/// `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every addressed element lies inside
    // the slices, and `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Dense `(n, c, h, w)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return config_err(format!(
                "tensor data length {} does not match dims {:?} ({} elements)",
                data.len(),
                dims,
                expected
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    pub fn c(&self) -> usize {
        self.dims[1]
    }
    pub fn h(&self) -> usize {
        self.dims[2]
    }
    pub fn w(&self) -> usize {
        self.dims[3]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Number of elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn offset(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * self.dims[3] + idx[3]
    }

    /// Inverse of [`Tensor4::offset`].
    pub fn unravel(&self, mut flat: usize) -> [usize; 4] {
        let mut idx = [0; 4];
        for axis in (0..4).rev() {
            idx[axis] = flat % self.dims[axis].max(1);
            flat /= self.dims[axis].max(1);
        }
        idx
    }

    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], value: T) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`; dims must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        check_same(self, other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// In-place `self -= other`; dims must match.
    pub fn sub_assign(&mut self, other: &Self) -> Result<()> {
        check_same(self, other, "sub_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a - b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_same(self, other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        check_same(self, other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Copies batch item `n` into a `(c, h·w)` matrix.
    pub fn item_matrix(&self, n: usize) -> Matrix<T> {
        Matrix { rows: self.c(), cols: self.h() * self.w(), data: self.item(n).to_vec() }
    }

    /// Stacks `(c, h·w)` matrices back into an `(n, c, h, w)` tensor.
    pub fn from_matrices(items: &[Matrix<T>], h: usize, w: usize) -> Result<Self> {
        let c = items.first().map(|m| m.rows).unwrap_or(0);
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for m in items {
            if m.rows != c || m.cols != h * w {
                return config_err(format!(
                    "matrix {}x{} cannot be reshaped to ({c}, {h}, {w})",
                    m.rows, m.cols
                ));
            }
            data.extend_from_slice(&m.data);
        }
        Self::from_vec([items.len(), c, h, w], data)
    }

    /// Selects a contiguous range of batch items.
    pub fn batch_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n() {
            return config_err(format!("batch slice {start}..{} out of {}", start + len, self.n()));
        }
        let il = self.item_len();
        Self::from_vec(
            [len, self.c(), self.h(), self.w()],
            self.data[start * il..(start + len) * il].to_vec(),
        )
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let Some(first) = items.first() else {
            return config_err("cannot stack an empty list of tensors");
        };
        let [_, c, h, w] = first.dims;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if t.dims[1..] != first.dims[1..] {
                return config_err(format!("stack: dims {:?} vs {:?}", t.dims, first.dims));
            }
            data.extend_from_slice(&t.data);
            n += t.n();
        }
        Self::from_vec([n, c, h, w], data)
    }
}

pub(crate) fn check_same<T>(a: &Tensor4<T>, b: &Tensor4<T>, op: &str) -> Result<()> {
    if a.dims != b.dims {
        return config_err(format!("{op}: dimension mismatch {:?} vs {:?}", a.dims, b.dims));
    }
    Ok(())
}

/// Row-major 2-D matrix used by the non-local block.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return config_err(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size, size);
        for i in 0..size {
            m.data[i * size + i] = T::one();
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}
