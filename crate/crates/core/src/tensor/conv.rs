//! 2-D convolution and its transpose, lowered to GEMM through im2col.

use super::{gemm, Real, Tensor4};
use crate::error::{config_err, Result};

/// Geometry of a zero-padded 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// 3×3, stride 1, pad 1: preserves spatial size.
    pub fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        Self { kernel: (3, 3), stride: 1, pad: 1, in_channels, out_channels }
    }

    /// 1×1, stride 1, no padding.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self { kernel: (1, 1), stride: 1, pad: 0, in_channels, out_channels }
    }

    /// 3×3 with pad 1 and the given stride.
    pub fn strided3x3(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self { kernel: (3, 3), stride, pad: 1, in_channels, out_channels }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    /// Weight dims when this spec describes a transposed convolution
    /// (`in_channels` being the channels of the tensor it is applied to).
    pub fn transpose_weight_dims(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel.0, self.kernel.1]
    }

    /// `floor((h + 2·pad − k) / stride) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 || kh == 0 || kw == 0 {
            return config_err(format!("degenerate conv spec {self:?}"));
        }
        if h + 2 * self.pad < kh || w + 2 * self.pad < kw {
            return config_err(format!(
                "input {h}x{w} too small for kernel {kh}x{kw} with pad {}",
                self.pad
            ));
        }
        Ok(((h + 2 * self.pad - kh) / self.stride + 1, (w + 2 * self.pad - kw) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.pad == 0
    }
}

/// Gradients of a (transposed) convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub dx: Tensor4<T>,
    pub dw: Tensor4<T>,
    pub db: Vec<T>,
}

/// Sliding-window geometry: a `(c, h, w)` input scanned into `(oh, ow)`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, c: usize, h: usize, w: usize) -> Result<Self> {
        let (oh, ow) = spec.output_hw(h, w)?;
        Ok(Self {
            c,
            h,
            w,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            stride: spec.stride,
            pad: spec.pad,
            oh,
            ow,
        })
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output index range `[lo, hi)` whose source coordinate
    /// `o·stride + k − pad` falls inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (extent as isize - 1 - off).div_euclid(s) + 1;
        let lo = lo.clamp(0, out as isize) as usize;
        let hi = hi.clamp(0, out as isize) as usize;
        (lo, hi.max(lo))
    }

    fn im2col<T: Real>(&self, src: &[T], col: &mut [T]) {
        let p = self.col_cols();
        for ci in 0..self.c {
            let plane = &src[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                let (oy0, oy1) = self.valid_range(ky, self.h, self.oh);
                for kx in 0..self.kw {
                    let (ox0, ox1) = self.valid_range(kx, self.w, self.ow);
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    dst.fill(T::zero());
                    for oy in oy0..oy1 {
                        let iy = oy * self.stride + ky - self.pad;
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            let ix0 = ox0 + kx - self.pad;
                            drow[ox0..ox1].copy_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                        } else {
                            for ox in ox0..ox1 {
                                drow[ox] = src_row[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-adds columns back into `dst`.
    fn col2im<T: Real>(&self, col: &[T], dst: &mut [T]) {
        let p = self.col_cols();
        for ci in 0..self.c {
            let plane = &mut dst[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                let (oy0, oy1) = self.valid_range(ky, self.h, self.oh);
                for kx in 0..self.kw {
                    let (ox0, ox1) = self.valid_range(kx, self.w, self.ow);
                    if ox0 == ox1 {
                        continue;
                    }
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in oy0..oy1 {
                        let iy = oy * self.stride + ky - self.pad;
                        let prow = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let srow = &src[oy * self.ow + ox0..oy * self.ow + ox1];
                        let ix0 = ox0 * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            for (d, &v) in prow[ix0..ix0 + srow.len()].iter_mut().zip(srow) {
                                *d = *d + v;
                            }
                        } else {
                            for (j, &v) in srow.iter().enumerate() {
                                let ix = ix0 + j * self.stride;
                                prow[ix] = prow[ix] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_inputs<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    b: Option<&[T]>,
    spec: &ConvSpec,
    expected_w: [usize; 4],
    bias_len: usize,
    op: &str,
) -> Result<()> {
    if x.c() != spec.in_channels {
        return config_err(format!(
            "{op}: input has {} channels, spec expects {}",
            x.c(),
            spec.in_channels
        ));
    }
    if w.dims() != expected_w {
        return config_err(format!("{op}: weight dims {:?}, expected {:?}", w.dims(), expected_w));
    }
    if let Some(b) = b {
        if b.len() != bias_len {
            return config_err(format!("{op}: bias length {}, expected {bias_len}", b.len()));
        }
    }
    Ok(())
}

/// Zero-padded 2-D convolution. `w` is `(out_c, in_c, kh, kw)`.
pub fn conv2d<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    check_conv_inputs(x, w, Some(b), spec, spec.weight_dims(), spec.out_channels, "conv2d")?;
    let g = Geometry::new(spec, x.c(), x.h(), x.w())?;
    let (k, p, co) = (g.col_rows(), g.col_cols(), spec.out_channels);
    let mut out = Tensor4::zeros([x.n(), co, g.oh, g.ow]);
    let mut col = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..x.n() {
        let dst = out.item_mut(n);
        for (c, &bias) in b.iter().enumerate() {
            dst[c * p..(c + 1) * p].fill(bias);
        }
        let src: &[T] = if spec.is_pointwise() {
            x.item(n)
        } else {
            g.im2col(x.item(n), &mut col);
            &col
        };
        gemm(false, false, co, p, k, T::one(), w.data(), src, T::one(), dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    spec: &ConvSpec,
    dy: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    check_conv_inputs(x, w, None, spec, spec.weight_dims(), 0, "conv2d_backward")?;
    let g = Geometry::new(spec, x.c(), x.h(), x.w())?;
    if dy.dims() != [x.n(), spec.out_channels, g.oh, g.ow] {
        return config_err(format!("conv2d_backward: upstream dims {:?}", dy.dims()));
    }
    let (k, p, co) = (g.col_rows(), g.col_cols(), spec.out_channels);
    let mut dx = Tensor4::zeros(x.dims());
    let mut dw = Tensor4::zeros(w.dims());
    let mut db = vec![T::zero(); co];
    let (mut col, mut dcol) = if spec.is_pointwise() {
        (Vec::new(), Vec::new())
    } else {
        (vec![T::zero(); k * p], vec![T::zero(); k * p])
    };
    for n in 0..x.n() {
        let gy = dy.item(n);
        for (c, acc) in db.iter_mut().enumerate() {
            *acc = *acc + gy[c * p..(c + 1) * p].iter().copied().sum::<T>();
        }
        if spec.is_pointwise() {
            gemm(false, true, co, k, p, T::one(), gy, x.item(n), T::one(), dw.data_mut());
            gemm(true, false, k, p, co, T::one(), w.data(), gy, T::zero(), dx.item_mut(n));
        } else {
            g.im2col(x.item(n), &mut col);
            gemm(false, true, co, k, p, T::one(), gy, &col, T::one(), dw.data_mut());
            gemm(true, false, k, p, co, T::one(), w.data(), gy, T::zero(), &mut dcol);
            g.col2im(&dcol, dx.item_mut(n));
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Transposed convolution producing exactly `target_hw`.
///
/// `w` is `(in_c, out_c, kh, kw)` where `in_c` is the channel count of `x`.
/// The operator is the exact adjoint of [`conv2d`] mapping a `target_hw`
/// input to `x`'s spatial size, so odd pre-downscale sizes are restored
/// without ambiguity.
pub fn conv2d_transpose<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    b: &[T],
    spec: &ConvSpec,
    target_hw: (usize, usize),
) -> Result<Tensor4<T>> {
    check_conv_inputs(
        x,
        w,
        Some(b),
        spec,
        spec.transpose_weight_dims(),
        spec.out_channels,
        "conv2d_transpose",
    )?;
    let g = transpose_geometry(spec, x, target_hw)?;
    let (k, p, cx) = (g.col_rows(), g.col_cols(), spec.in_channels);
    let plane = target_hw.0 * target_hw.1;
    let mut out = Tensor4::zeros([x.n(), spec.out_channels, target_hw.0, target_hw.1]);
    let mut col = vec![T::zero(); k * p];
    for n in 0..x.n() {
        gemm(true, false, k, p, cx, T::one(), w.data(), x.item(n), T::zero(), &mut col);
        let dst = out.item_mut(n);
        g.col2im(&col, dst);
        for (c, &bias) in b.iter().enumerate() {
            for v in dst[c * plane..(c + 1) * plane].iter_mut() {
                *v = *v + bias;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_transpose`].
pub fn conv2d_transpose_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    spec: &ConvSpec,
    dy: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    check_conv_inputs(
        x,
        w,
        None,
        spec,
        spec.transpose_weight_dims(),
        0,
        "conv2d_transpose_backward",
    )?;
    if dy.n() != x.n() || dy.c() != spec.out_channels {
        return config_err(format!("conv2d_transpose_backward: upstream dims {:?}", dy.dims()));
    }
    let g = transpose_geometry(spec, x, (dy.h(), dy.w()))?;
    let (k, p, cx) = (g.col_rows(), g.col_cols(), spec.in_channels);
    let plane = dy.h() * dy.w();
    let mut dx = Tensor4::zeros(x.dims());
    let mut dw = Tensor4::zeros(w.dims());
    let mut db = vec![T::zero(); spec.out_channels];
    let mut dcol = vec![T::zero(); k * p];
    for n in 0..x.n() {
        let gy = dy.item(n);
        for (c, acc) in db.iter_mut().enumerate() {
            *acc = *acc + gy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
        }
        g.im2col(gy, &mut dcol);
        gemm(false, false, cx, p, k, T::one(), w.data(), &dcol, T::zero(), dx.item_mut(n));
        gemm(false, true, cx, k, p, T::one(), x.item(n), &dcol, T::one(), dw.data_mut());
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Geometry of the forward convolution this transpose is the adjoint of.
fn transpose_geometry<T: Real>(
    spec: &ConvSpec,
    x: &Tensor4<T>,
    target_hw: (usize, usize),
) -> Result<Geometry> {
    let g = Geometry::new(spec, spec.out_channels, target_hw.0, target_hw.1)?;
    if (g.oh, g.ow) != (x.h(), x.w()) {
        return config_err(format!(
            "conv2d_transpose: target {}x{} downscales to {}x{}, not the input's {}x{}",
            target_hw.0,
            target_hw.1,
            g.oh,
            g.ow,
            x.h(),
            x.w()
        ));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct sliding-window evaluation, independent of im2col.
    fn conv_oracle(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], s: &ConvSpec) -> Tensor4<f64> {
        let (oh, ow) = s.output_hw(x.h(), x.w()).unwrap();
        Tensor4::from_fn([x.n(), s.out_channels, oh, ow], |[n, co, oy, ox]| {
            let mut acc = b[co];
            for ci in 0..s.in_channels {
                for ky in 0..s.kernel.0 {
                    for kx in 0..s.kernel.1 {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < x.h() && (ix as usize) < x.w() {
                            acc += x.get([n, ci, iy as usize, ix as usize]) * w.get([co, ci, ky, kx]);
                        }
                    }
                }
            }
            acc
        })
    }

    /// Scatter-add evaluation of the transposed convolution.
    fn transpose_oracle(
        x: &Tensor4<f64>,
        w: &Tensor4<f64>,
        s: &ConvSpec,
        target: (usize, usize),
    ) -> Tensor4<f64> {
        let mut out = Tensor4::zeros([x.n(), s.out_channels, target.0, target.1]);
        for n in 0..x.n() {
            for ci in 0..s.in_channels {
                for y in 0..x.h() {
                    for xx in 0..x.w() {
                        for co in 0..s.out_channels {
                            for ky in 0..s.kernel.0 {
                                for kx in 0..s.kernel.1 {
                                    let ty = (y * s.stride + ky) as isize - s.pad as isize;
                                    let tx = (xx * s.stride + kx) as isize - s.pad as isize;
                                    if ty >= 0
                                        && tx >= 0
                                        && (ty as usize) < target.0
                                        && (tx as usize) < target.1
                                    {
                                        let idx = [n, co, ty as usize, tx as usize];
                                        let v = out.get(idx)
                                            + x.get([n, ci, y, xx]) * w.get([ci, co, ky, kx]);
                                        out.set(idx, v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_kernel() {
        let x = Tensor4::from_vec([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor4::filled([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &[0.0], &ConvSpec::same3x3(1, 1)).unwrap();
        assert_eq!(y.data(), &[12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]);
        assert_eq!(y, conv_oracle(&x, &w, &[0.0], &ConvSpec::same3x3(1, 1)));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 1, 5, 4], &mut rng);
        let mut w = Tensor4::zeros([1, 1, 3, 3]);
        w.set([0, 0, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &w, &[0.0], &ConvSpec::same3x3(1, 1)).unwrap(), x);
    }

    #[test]
    fn conv_stride_two_shape() {
        let x = Tensor4::<f64>::zeros([1, 1, 4, 4]);
        let w = Tensor4::zeros([1, 1, 3, 3]);
        let y = conv2d(&x, &w, &[0.0], &ConvSpec::strided3x3(1, 1, 2)).unwrap();
        assert_eq!(y.dims(), [1, 1, 2, 2]);
    }

    #[test]
    fn conv_matches_oracle_on_random_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (spec, h, w) in [
            (ConvSpec::same3x3(3, 4), 5, 6),
            (ConvSpec::strided3x3(2, 3, 2), 7, 9),
            (ConvSpec::strided3x3(2, 2, 3), 8, 5),
            (ConvSpec::pointwise(4, 2), 3, 3),
            (ConvSpec { kernel: (2, 3), stride: 2, pad: 0, in_channels: 2, out_channels: 1 }, 6, 7),
        ] {
            let x = random([2, spec.in_channels, h, w], &mut rng);
            let wt = random(spec.weight_dims(), &mut rng);
            let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = conv2d(&x, &wt, &b, &spec).unwrap();
            let o = conv_oracle(&x, &wt, &b, &spec);
            assert!(y.max_abs_diff(&o).unwrap() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor4::<f64>::zeros([1, 2, 4, 4]);
        let spec = ConvSpec::same3x3(3, 1);
        assert!(conv2d(&x, &Tensor4::zeros(spec.weight_dims()), &[0.0], &spec).is_err());
        let spec = ConvSpec::same3x3(2, 1);
        assert!(conv2d(&x, &Tensor4::zeros([1, 2, 1, 1]), &[0.0], &spec).is_err());
        assert!(conv2d(&x, &Tensor4::zeros(spec.weight_dims()), &[0.0, 0.0], &spec).is_err());
        let spec = ConvSpec { kernel: (5, 5), stride: 1, pad: 0, in_channels: 2, out_channels: 1 };
        assert!(conv2d(&x, &Tensor4::zeros(spec.weight_dims()), &[0.0], &spec).is_err());
    }

    #[test]
    fn transpose_shape_and_overlap_counts() {
        let spec = ConvSpec::strided3x3(1, 1, 2);
        let x = Tensor4::filled([1, 1, 2, 2], 1.0);
        let w = Tensor4::filled([1, 1, 3, 3], 1.0);
        let y = conv2d_transpose(&x, &w, &[0.0], &spec, (4, 4)).unwrap();
        assert_eq!(y.dims(), [1, 1, 4, 4]);
        // Input pixel (i, j) lands on rows 2i-1..=2i+1 and cols 2j-1..=2j+1.
        let expected = [1.0, 2.0, 1.0, 1.0, 2.0, 4.0, 2.0, 2.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0];
        assert_eq!(y.data(), &expected);
        assert_eq!(y, transpose_oracle(&x, &w, &spec, (4, 4)));
    }

    #[test]
    fn transpose_matches_scatter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (target, stride) in [((7, 9), 2), ((8, 8), 2), ((9, 10), 3)] {
            let spec = ConvSpec::strided3x3(3, 2, stride);
            let (oh, ow) = ConvSpec::strided3x3(2, 3, stride).output_hw(target.0, target.1).unwrap();
            let x = random([2, 3, oh, ow], &mut rng);
            let w = random(spec.transpose_weight_dims(), &mut rng);
            let y = conv2d_transpose(&x, &w, &[0.0, 0.0], &spec, target).unwrap();
            assert_eq!(y.dims(), [2, 2, target.0, target.1]);
            assert!(y.max_abs_diff(&transpose_oracle(&x, &w, &spec, target)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn transpose_rejects_inconsistent_target() {
        let spec = ConvSpec::strided3x3(1, 1, 2);
        let x = Tensor4::<f64>::zeros([1, 1, 2, 2]);
        let w = Tensor4::zeros([1, 1, 3, 3]);
        assert!(conv2d_transpose(&x, &w, &[0.0], &spec, (6, 4)).is_err());
        assert!(conv2d_transpose(&x, &w, &[0.0], &spec, (3, 3)).is_ok());
    }

    #[test]
    fn conv_and_transpose_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w, stride) in [(8, 8, 2), (7, 9, 2), (6, 5, 1), (10, 7, 3)] {
            let fwd = ConvSpec::strided3x3(3, 4, stride);
            let bwd = ConvSpec::strided3x3(4, 3, stride);
            let wt = random(fwd.weight_dims(), &mut rng);
            let x = random([2, 3, h, w], &mut rng);
            let y0 = conv2d(&x, &wt, &[0.0; 4], &fwd).unwrap();
            let y = random(y0.dims(), &mut rng);
            let xt = conv2d_transpose(&y, &wt, &[0.0; 3], &bwd, (h, w)).unwrap();
            let lhs = y0.dot(&y).unwrap();
            let rhs = x.dot(&xt).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }
}
