use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor4};

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Taps `(source index, weight)` for every output sample along one axis.
///
/// Output sample `i` sits at source coordinate `(i + 0.5) / scale - 0.5`.
/// When shrinking, the kernel is stretched by `1 / scale`. Indices outside
/// the input are clamped to the edge and weights are normalised to sum to 1.
pub(crate) fn axis_taps(len_in: usize, len_out: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    let squeeze = scale.min(1.0);
    let radius = 2.0 / squeeze;
    (0..len_out)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let lo = (u - radius).ceil() as i64;
            let hi = (u + radius).floor() as i64;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| {
                    let idx = j.clamp(0, len_in as i64 - 1) as usize;
                    (idx, cubic((u - j as f64) * squeeze))
                })
                .filter(|&(_, wt)| wt != 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in taps.iter_mut() {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

fn resize_impl<T: Real>(img: &Tensor4<T>, out_hw: (usize, usize), scale: (f64, f64)) -> Tensor4<T> {
    let (h, w) = (img.h(), img.w());
    let (oh, ow) = out_hw;
    let rows = axis_taps(h, oh, scale.0);
    let cols = axis_taps(w, ow, scale.1);
    let mut out = Tensor4::zeros([img.n(), img.c(), oh, ow]);
    let mut tmp = vec![0.0f64; oh * w];
    for n in 0..img.n() {
        for c in 0..img.c() {
            let plane = &img.data()[img.offset([n, c, 0, 0])..][..h * w];
            for (y, taps) in rows.iter().enumerate() {
                let dst = &mut tmp[y * w..(y + 1) * w];
                dst.fill(0.0);
                for &(sy, wt) in taps {
                    for (d, s) in dst.iter_mut().zip(&plane[sy * w..(sy + 1) * w]) {
                        *d += wt * s.to_f64().unwrap_or(0.0);
                    }
                }
            }
            let base = out.offset([n, c, 0, 0]);
            let dst = &mut out.data_mut()[base..base + oh * ow];
            for y in 0..oh {
                let src = &tmp[y * w..(y + 1) * w];
                for (x, taps) in cols.iter().enumerate() {
                    let v: f64 = taps.iter().map(|&(sx, wt)| wt * src[sx]).sum();
                    dst[y * ow + x] = T::lit(v);
                }
            }
        }
    }
    out
}

/// Bicubic resize by `scale_num / scale_den`; output size is
/// `ceil(len · scale)` per axis.
pub fn bicubic_resize<T: Real>(img: &Tensor4<T>, scale_num: u32, scale_den: u32) -> Result<Tensor4<T>> {
    if scale_num == 0 || scale_den == 0 {
        return config_err(format!("resize scale must be positive, got {scale_num}/{scale_den}"));
    }
    if scale_num == scale_den {
        return Ok(img.clone());
    }
    let out_len = |len: usize| (len as u64 * scale_num as u64).div_ceil(scale_den as u64) as usize;
    let s = scale_num as f64 / scale_den as f64;
    Ok(resize_impl(img, (out_len(img.h()), out_len(img.w())), (s, s)))
}

/// Bicubic resize to an explicit size; each axis uses scale `out / in`.
pub fn resize_to<T: Real>(img: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    if out_h == 0 || out_w == 0 || img.h() == 0 || img.w() == 0 {
        return config_err("resize: empty input or output size");
    }
    if (out_h, out_w) == (img.h(), img.w()) {
        return Ok(img.clone());
    }
    let scale = (out_h as f64 / img.h() as f64, out_w as f64 / img.w() as f64);
    Ok(resize_impl(img, (out_h, out_w), scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
        // Integer-shifted samples sum to one.
        for t in [0.0, 0.1, 0.37, 0.5, 0.93] {
            let s: f64 = (-3..=3).map(|k| cubic(t + k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_and_identity() {
        let img = Tensor4::<f64>::filled([2, 3, 9, 7], 0.3);
        for (n, d) in [(1, 2), (1, 3), (2, 1), (3, 1), (4, 3)] {
            let r = bicubic_resize(&img, n, d).unwrap();
            assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-14));
        }
        let ramp = Tensor4::from_fn([1, 1, 5, 6], |[_, _, y, x]| (y * 6 + x) as f64);
        assert_eq!(bicubic_resize(&ramp, 3, 3).unwrap(), ramp);
        assert_eq!(bicubic_resize(&ramp, 1, 2).unwrap().dims(), [1, 1, 3, 3]);
        assert_eq!(bicubic_resize(&ramp, 3, 1).unwrap().dims(), [1, 1, 15, 18]);
        assert!(bicubic_resize(&ramp, 0, 1).is_err());
    }

    #[test]
    fn upscale_interpolates_interior_ramp() {
        // Cubic convolution reproduces linear functions away from the border.
        let ramp = Tensor4::from_fn([1, 1, 1, 16], |[_, _, _, x]| x as f64);
        let up = resize_to(&ramp, 1, 32).unwrap();
        for x in 4..28 {
            let u = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((up.get([0, 0, 0, x]) - u).abs() < 1e-12);
        }
    }
}
