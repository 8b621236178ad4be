//! Image-quality metrics.
//!
//! Both metrics score 8-bit-quantized values: images in `[0, 1]` are mapped
//! through `round(x · 255)` before comparison. Values are not clamped, so an
//! unclipped noisy image keeps its full error.

use serde::Serialize;

use crate::error::{config_err, Result};
use crate::tensor::{check_same, Real, Tensor4};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const PEAK: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricResult {
    /// `f64::INFINITY` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
}

fn quantize<T: Real>(v: T) -> f64 {
    (v.to_f64().unwrap_or(f64::NAN) * PEAK).round()
}

/// PSNR in dB on the 0–255 scale; `f64::INFINITY` when the images agree
/// after quantization.
pub fn psnr<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    check_same(a, b, "psnr")?;
    let qa: Vec<f64> = a.data().iter().map(|&v| quantize(v)).collect();
    let qb: Vec<f64> = b.data().iter().map(|&v| quantize(v)).collect();
    psnr_values(&qa, &qb, PEAK)
}

/// PSNR of raw samples against a peak value.
pub fn psnr_values(a: &[f64], b: &[f64], max_val: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return config_err(format!("psnr: {} vs {} samples", a.len(), b.len()));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.map(|v| v / total)
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&plane[y * w + x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let e_aa = filter_valid(&prod(a, a), h, w, &g);
    let e_bb = filter_valid(&prod(b, b), h, w, &g);
    let e_ab = filter_valid(&prod(a, b), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / n as f64
}

/// Mean SSIM over the valid positions of an 11×11 Gaussian window
/// (σ = 1.5, K1 = 0.01, K2 = 0.03, L = 255), averaged over channels and
/// batch items.
pub fn ssim<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    check_same(a, b, "ssim")?;
    let (h, w) = (a.h(), a.w());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return config_err(format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"));
    }
    let planes = a.n() * a.c();
    let mut total = 0.0;
    for p in 0..planes {
        let range = p * h * w..(p + 1) * h * w;
        let qa: Vec<f64> = a.data()[range.clone()].iter().map(|&v| quantize(v)).collect();
        let qb: Vec<f64> = b.data()[range].iter().map(|&v| quantize(v)).collect();
        total += ssim_plane(&qa, &qb, h, w);
    }
    Ok(total / planes as f64)
}

/// Studio-range BT.601 luma, returned on the `[0, 1]` scale.
pub fn rgb_to_y<T: Real>(img: &Tensor4<T>) -> Result<Tensor4<T>> {
    if img.c() != 3 {
        return config_err(format!("rgb_to_y needs 3 channels, got {}", img.c()));
    }
    let (h, w) = (img.h(), img.w());
    Ok(Tensor4::from_fn([img.n(), 1, h, w], |[n, _, y, x]| {
        let px = |c| img.get([n, c, y, x]).to_f64().unwrap_or(f64::NAN);
        T::lit((16.0 + 65.481 * px(0) + 128.553 * px(1) + 24.966 * px(2)) / 255.0)
    }))
}

/// Drops `border` pixels from every edge.
pub fn crop_border<T: Real>(img: &Tensor4<T>, border: usize) -> Result<Tensor4<T>> {
    if border == 0 {
        return Ok(img.clone());
    }
    let (h, w) = (img.h(), img.w());
    if 2 * border >= h || 2 * border >= w {
        return config_err(format!("cannot crop {border} pixels from a {h}×{w} image"));
    }
    Ok(Tensor4::from_fn([img.n(), img.c(), h - 2 * border, w - 2 * border], |[n, c, y, x]| {
        img.get([n, c, y + border, x + border])
    }))
}

/// PSNR and SSIM of `restored` against `reference`, optionally on the Y
/// channel and after cropping a border. SSIM is `NaN` when the scored
/// plane is smaller than the window.
pub fn score<T: Real>(
    restored: &Tensor4<T>,
    reference: &Tensor4<T>,
    y_channel: bool,
    border: usize,
) -> Result<MetricResult> {
    let (mut a, mut b) = (restored.clone(), reference.clone());
    if y_channel && a.c() == 3 {
        a = rgb_to_y(&a)?;
        b = rgb_to_y(&b)?;
    }
    a = crop_border(&a, border)?;
    b = crop_border(&b, border)?;
    let psnr_db = psnr(&a, &b)?;
    let ssim = if a.h() >= SSIM_WINDOW && a.w() >= SSIM_WINDOW { ssim(&a, &b)? } else { f64::NAN };
    Ok(MetricResult { psnr_db, ssim })
}
