use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::imageio::{list_images, load_image};
use crate::metrics::rgb_to_y;
use crate::tensor::Tensor4;

/// A clean image with a display name.
#[derive(Clone, Debug)]
pub struct CorpusImage {
    pub name: String,
    pub hq: Tensor4<f32>,
}

/// Clean training or evaluation images, each `(1, c, h, w)` in `[0, 1]`.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub images: Vec<CorpusImage>,
}

/// Brings a loaded image to `channels` channels. RGB is reduced to luma for
/// single-channel networks; gray images cannot feed an RGB network.
pub fn to_channels(img: Tensor4<f32>, channels: usize) -> Result<Tensor4<f32>> {
    match (img.c(), channels) {
        (a, b) if a == b => Ok(img),
        (3, 1) => rgb_to_y(&img),
        (a, b) => config_err(format!("cannot turn a {a}-channel image into {b} channels")),
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Loads every PNG/PGM/PPM in `dir`, converted to `channels` channels.
    /// Unreadable files are skipped with a warning.
    pub fn from_dir(dir: &Path, channels: usize) -> Result<Self> {
        let mut images = Vec::new();
        for path in list_images(dir)? {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match load_image(&path).and_then(|img| to_channels(img, channels)) {
                Ok(hq) => images.push(CorpusImage { name, hq }),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(Self { images })
    }

    /// Procedural test images: a smooth gradient background with
    /// overlapping discs, rectangles and striped patches. Every image is
    /// fully determined by `(seed, index)`.
    pub fn synthetic(count: usize, size: usize, channels: usize, seed: u64) -> Self {
        let images = (0..count)
            .map(|i| CorpusImage { name: format!("synthetic_{i:03}"), hq: synthetic_image(size, size, channels, seed, i as u64) })
            .collect();
        Self { images }
    }

    pub fn split_off(&mut self, at: usize) -> Corpus {
        Corpus { images: self.images.split_off(at.min(self.images.len())) }
    }
}

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Stripes { cy: f64, cx: f64, r: f64, freq: f64, angle: f64 },
}

fn synthetic_image(h: usize, w: usize, channels: usize, seed: u64, index: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (hf, wf) = (h as f64, w as f64);
    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(0.05..0.95)) };
    let base = color(&mut rng);
    let slope = color(&mut rng).map(|v| (v - 0.5) * 0.6);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut shapes = Vec::new();
    for _ in 0..rng.gen_range(6..12) {
        let c = color(&mut rng);
        let cy = rng.gen_range(0.0..hf);
        let cx = rng.gen_range(0.0..wf);
        let r = rng.gen_range(0.08..0.3) * hf.min(wf);
        let shape = match rng.gen_range(0..3) {
            0 => Shape::Disc { cy, cx, r },
            1 => Shape::Rect { y0: cy - r, x0: cx - r * rng.gen_range(0.5..1.5), y1: cy + r, x1: cx + r },
            _ => Shape::Stripes { cy, cx, r, freq: rng.gen_range(0.3..1.2), angle: rng.gen_range(0.0..3.2) },
        };
        shapes.push((shape, c));
    }
    let mut rgb = Tensor4::<f32>::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64 / hf - 0.5, x as f64 / wf - 0.5);
            let t = yf * angle.cos() + xf * angle.sin();
            let mut px: [f64; 3] = std::array::from_fn(|c| base[c] + slope[c] * t);
            let (yp, xp) = (y as f64 + 0.5, x as f64 + 0.5);
            for (shape, c) in &shapes {
                match *shape {
                    Shape::Disc { cy, cx, r } => {
                        if (yp - cy).powi(2) + (xp - cx).powi(2) <= r * r {
                            px = *c;
                        }
                    }
                    Shape::Rect { y0, x0, y1, x1 } => {
                        if (y0..y1).contains(&yp) && (x0..x1).contains(&xp) {
                            px = *c;
                        }
                    }
                    Shape::Stripes { cy, cx, r, freq, angle } => {
                        if (yp - cy).abs() <= r && (xp - cx).abs() <= r {
                            let s = ((yp * angle.cos() + xp * angle.sin()) * freq).sin();
                            px = std::array::from_fn(|k| c[k] * (0.75 + 0.25 * s));
                        }
                    }
                }
            }
            for (ch, v) in px.iter().enumerate() {
                rgb.set([0, ch, y, x], (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0);
            }
        }
    }
    if channels == 1 {
        let y = rgb_to_y(&rgb).expect("three channels");
        y.map(|v| (v * 255.0).round() / 255.0)
    } else {
        rgb
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_varied() {
        let a = Corpus::synthetic(3, 24, 3, 5);
        let b = Corpus::synthetic(3, 24, 3, 5);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.hq, y.hq);
        }
        assert_ne!(a.images[0].hq, a.images[1].hq);
        let gray = Corpus::synthetic(1, 16, 1, 5);
        assert_eq!(gray.images[0].hq.dims(), [1, 1, 16, 16]);
        for img in &a.images {
            assert!(img.hq.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn channel_conversion() {
        let rgb = Tensor4::<f32>::filled([1, 3, 2, 2], 1.0);
        assert_eq!(to_channels(rgb.clone(), 1).unwrap().dims(), [1, 1, 2, 2]);
        assert!(to_channels(Tensor4::<f32>::zeros([1, 1, 2, 2]), 3).is_err());
    }
}
