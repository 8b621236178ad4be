use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor4};

/// Baseline luminance quantization table, row-major in natural (not zigzag) order.
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Luminance table scaled to `quality` with the libjpeg rule.
pub fn quant_table(quality: u8) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return config_err(format!("JPEG quality must be in 1..=100, got {quality}"));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &base) in out.iter_mut().zip(&LUMA_TABLE) {
        let v = (u32::from(base) * scale + 50) / 100;
        *o = v.clamp(1, 255) as f64;
    }
    Ok(out)
}

/// Orthonormal 8-point DCT-II basis, `basis[k][n]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (k, row) in b.iter_mut().enumerate() {
            let norm = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = norm * ((2 * n + 1) as f64 * k as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// 2-D transform of an 8×8 block: `B · X · Bᵀ` (forward) or `Bᵀ · X · B` (inverse).
fn transform(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let b = dct_basis();
    let coef = |i: usize, j: usize| if inverse { b[j][i] } else { b[i][j] };
    let mut tmp = [0.0; 64];
    for r in 0..8 {
        for c in 0..8 {
            tmp[r * 8 + c] = (0..8).map(|k| coef(r, k) * block[k * 8 + c]).sum();
        }
    }
    let mut out = [0.0; 64];
    for r in 0..8 {
        for c in 0..8 {
            out[r * 8 + c] = (0..8).map(|k| tmp[r * 8 + k] * coef(c, k)).sum();
        }
    }
    out
}

/// Lossy core of baseline JPEG on single-channel planes in `[0, 1]`.
///
/// Each 8×8 block (edges padded by replication) is level-shifted, DCT
/// transformed, quantized with [`quant_table`], dequantized and transformed
/// back. Output samples are rounded to 8 bits and clamped to `[0, 1]`.
/// Entropy coding is lossless and omitted.
pub fn jpeg_degrade<T: Real>(img: &Tensor4<T>, quality: u8) -> Result<Tensor4<T>> {
    if img.c() != 1 {
        return config_err(format!(
            "JPEG degradation works on one luminance plane, got {} channels",
            img.c()
        ));
    }
    let table = quant_table(quality)?;
    let (h, w) = (img.h(), img.w());
    let mut out = img.clone();
    for n in 0..img.n() {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [0.0; 64];
                for (i, v) in block.iter_mut().enumerate() {
                    let y = (by + i / 8).min(h - 1);
                    let x = (bx + i % 8).min(w - 1);
                    let s = img.get([n, 0, y, x]).to_f64().unwrap_or(0.0);
                    *v = s * 255.0 - 128.0;
                }
                let mut coeffs = transform(&block, false);
                for (c, q) in coeffs.iter_mut().zip(&table) {
                    *c = (*c / q).round() * q;
                }
                let rec = transform(&coeffs, true);
                for i in 0..64 {
                    let (y, x) = (by + i / 8, bx + i % 8);
                    if y < h && x < w {
                        let v = ((rec[i] + 128.0).round().clamp(0.0, 255.0)) / 255.0;
                        out.set([n, 0, y, x], T::lit(v));
                    }
                }
            }
        }
    }
    Ok(out)
}
