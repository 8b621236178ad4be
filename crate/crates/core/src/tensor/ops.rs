use super::{check_same, gemm, Matrix, Real, Tensor4};
use crate::error::{config_err, Result};

pub fn add<T: Real>(x: &Tensor4<T>, y: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut out = x.clone();
    out.add_assign(y)?;
    Ok(out)
}

/// Both operands receive the upstream gradient unchanged.
pub fn add_backward<T: Real>(dy: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    (dy.clone(), dy.clone())
}

pub fn mul<T: Real>(x: &Tensor4<T>, y: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_same(x, y, "mul")?;
    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| a * b).collect();
    Tensor4::from_vec(x.dims(), data)
}

pub fn mul_backward<T: Real>(
    x: &Tensor4<T>,
    y: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    Ok((mul(dy, y)?, mul(dy, x)?))
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its *input*; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_same(x, dy, "relu_backward")?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(x.dims(), data)
}

#[inline]
fn sigmoid_scalar<T: Real>(v: T) -> T {
    // Branch on sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

/// Gradient of [`sigmoid`] given its *output* `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_same(y, dy, "sigmoid_backward")?;
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor4::from_vec(y.dims(), data)
}

/// Branch-free single-precision `exp` (Cephes polynomial, relative error
/// below 2e-7 on the normal range). Inputs below -87.3 flush to the smallest
/// normal value's neighbourhood instead of producing denormals.
#[inline(always)]
pub(crate) fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Adding and subtracting 1.5·2²³ rounds to the nearest integer.
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.3, 88.3);
    let n = (x * LOG2E + ROUND) - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let e = p * r * r + r + 1.0;
    e * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = &mut out.data[r * m.cols..(r + 1) * m.cols];
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let total = T::exp_shifted(row, max);
    let inv = T::one() / total;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Gradient of [`softmax_rows`] given its output `y`:
/// `dx_ij = y_ij (dy_ij - Σ_k y_ik dy_ik)`.
pub fn softmax_rows_backward<T: Real>(y: &Matrix<T>, dy: &Matrix<T>) -> Result<Matrix<T>> {
    if y.rows != dy.rows || y.cols != dy.cols {
        return config_err(format!(
            "softmax_rows_backward: {}x{} vs {}x{}",
            y.rows, y.cols, dy.rows, dy.cols
        ));
    }
    let mut dx = Matrix::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let yr = y.row(r);
        let gr = dy.row(r);
        let inner: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &a), &g) in dx.data[r * y.cols..(r + 1) * y.cols].iter_mut().zip(yr).zip(gr) {
            *d = a * (g - inner);
        }
    }
    Ok(dx)
}

pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    matmul_ex(a, false, b, false)
}

/// Gradients of `c = a · b`: `(dc · bᵀ, aᵀ · dc)`.
pub fn matmul_backward<T: Real>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    dc: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if dc.rows != a.rows || dc.cols != b.cols {
        return config_err(format!(
            "matmul_backward: upstream {}x{} does not match {}x{}",
            dc.rows, dc.cols, a.rows, b.cols
        ));
    }
    Ok((matmul_ex(dc, false, b, true)?, matmul_ex(a, true, dc, false)?))
}

/// `op(a) · op(b)` where `op` optionally transposes, without materialising
/// the transpose.
pub(crate) fn matmul_ex<T: Real>(
    a: &Matrix<T>,
    trans_a: bool,
    b: &Matrix<T>,
    trans_b: bool,
) -> Result<Matrix<T>> {
    let (m, ka) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if ka != kb {
        return config_err(format!(
            "matmul: inner dimensions disagree ({m}x{ka} · {kb}x{n})"
        ));
    }
    let mut out = Matrix::zeros(m, n);
    gemm(trans_a, trans_b, m, n, ka, T::one(), &a.data, &b.data, T::zero(), &mut out.data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec([1, 1, 1, data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let x = t(&[-3.0, -0.0, 0.5, 7.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
        let g = relu_backward(&t(&[-1.0, 0.0, 2.0]), &t(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(&t(&[0.0])).data()[0], 0.5);
        for v in [-30.0, -2.5, 0.1, 4.0, 30.0] {
            let s = sigmoid(&t(&[v, -v]));
            assert!((s.data()[0] + s.data()[1] - 1.0).abs() < 1e-15);
        }
        let s = sigmoid(&t(&[-800.0, 800.0, -20.0, 20.0]));
        assert!(s.all_finite());
        // f64 saturates at ±800 but stays within [0, 1].
        assert!(s.data()[2] > 0.0 && s.data()[3] < 1.0);
    }

    #[test]
    fn elementwise_dimension_mismatch() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[1.0, 2.0, 3.0]);
        assert!(add(&a, &b).is_err());
        assert!(mul(&a, &b).is_err());
        assert!(relu_backward(&a, &b).is_err());
    }

    #[test]
    fn fast_exp_accuracy() {
        let mut worst = 0.0f64;
        for i in 0..=200_000 {
            let x = -87.0 + 175.0 * i as f64 / 200_000.0;
            let exact = x.exp();
            let rel = ((exp_f32(x as f32) as f64 - exact) / exact).abs();
            worst = worst.max(rel);
        }
        // The input itself is rounded to f32, worth up to |x|·2⁻²⁴ relative.
        assert!(worst < 1e-5, "{worst}");
        assert_eq!(exp_f32(0.0), 1.0);
        assert!(exp_f32(-1e4) > 0.0 && exp_f32(-1e4) < 1e-37);
        let r = [(exp_f32(1.0) - std::f32::consts::E).abs(), (exp_f32(-1.0) - (-1.0f32).exp()).abs()];
        assert!(r[0] < 1e-6 && r[1] < 1e-7);
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_vec(2, 4, vec![3.0; 8]).unwrap();
        assert!(softmax_rows(&m).data.iter().all(|&v| (v - 0.25f64).abs() < 1e-15));

        let col = Matrix::from_vec(3, 1, vec![-5.0, 0.0, 1e3]).unwrap();
        assert!(softmax_rows(&col).data.iter().all(|&v| v == 1.0f64));

        let row: Matrix<f64> = Matrix::from_vec(1, 5, vec![0.3, -1.2, 2.5, 0.0, 1.1]).unwrap();
        let shifted = Matrix::from_vec(1, 5, row.data.iter().map(|v| v + 17.25).collect()).unwrap();
        let a = softmax_rows(&row);
        let b = softmax_rows(&shifted);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let big = Matrix::from_vec(1, 3, vec![1000.0f64, 999.0, -1000.0]).unwrap();
        let s = softmax_rows(&big);
        assert!(s.data.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![5.0, 6.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data, vec![17.0, 39.0]);

        let r: Matrix<f64> = Matrix::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.37 - 1.0).collect()).unwrap();
        assert_eq!(matmul(&r, &Matrix::identity(4)).unwrap(), r);

        let s = Matrix::from_vec(4, 2, (0..8).map(|v| (v as f64).sin()).collect()).unwrap();
        let lhs = matmul(&r, &s).unwrap().transpose();
        let rhs = matmul(&s.transpose(), &r.transpose()).unwrap();
        for (x, y) in lhs.data.iter().zip(&rhs.data) {
            assert!((x - y).abs() < 1e-12);
        }

        assert!(matmul(&a, &r).is_err());
    }
}
