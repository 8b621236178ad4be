//! Seeded generators of low-quality inputs.

mod bayer;
mod jpeg;
mod noise;
mod resize;

pub use bayer::{mosaic_bayer, BayerPattern};
pub use jpeg::{jpeg_degrade, quant_table, LUMA_TABLE};
pub use noise::add_awgn;
pub use resize::{bicubic_resize, cubic, resize_to};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::metrics::rgb_to_y;
use crate::tensor::{Real, Tensor4};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    #[default]
    Awgn,
    Mosaic,
    Jpeg,
    BicubicSr,
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DegradationKind::Awgn => "awgn",
            DegradationKind::Mosaic => "mosaic",
            DegradationKind::Jpeg => "jpeg",
            DegradationKind::BicubicSr => "bicubic_sr",
        })
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(DegradationKind::Awgn),
            "mosaic" => Ok(DegradationKind::Mosaic),
            "jpeg" => Ok(DegradationKind::Jpeg),
            "bicubic_sr" | "sr" => Ok(DegradationKind::BicubicSr),
            _ => config_err(format!("unknown degradation kind {s:?}")),
        }
    }
}

/// One degradation with its parameters. Fields not used by `kind` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    /// Noise standard deviation on the 0–255 scale.
    pub sigma: f64,
    pub pattern: BayerPattern,
    pub quality: u8,
    pub scale: u32,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self { kind: DegradationKind::Awgn, sigma: 25.0, pattern: BayerPattern::Rggb, quality: 10, scale: 2, seed: 0 }
    }
}

impl DegradationSpec {
    pub fn awgn(sigma: f64) -> Self {
        Self { kind: DegradationKind::Awgn, sigma, ..Self::default() }
    }

    pub fn mosaic(pattern: BayerPattern) -> Self {
        Self { kind: DegradationKind::Mosaic, pattern, ..Self::default() }
    }

    pub fn jpeg(quality: u8) -> Self {
        Self { kind: DegradationKind::Jpeg, quality, ..Self::default() }
    }

    pub fn bicubic_sr(scale: u32) -> Self {
        Self { kind: DegradationKind::BicubicSr, scale, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return config_err(format!("sigma must be a finite value >= 0, got {}", self.sigma));
        }
        if !(1..=100).contains(&self.quality) {
            return config_err(format!("quality must be in 1..=100, got {}", self.quality));
        }
        if !(2..=4).contains(&self.scale) {
            return config_err(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        Ok(())
    }

    /// Channels the restoration network sees for an input with `c` channels.
    pub fn channels(&self, c: usize) -> usize {
        if self.kind == DegradationKind::Jpeg && c == 3 {
            1
        } else {
            c
        }
    }

    /// Clean reference in the plane the degradation acts on: the Y channel
    /// for JPEG on colour input, the image itself otherwise.
    pub fn target<T: Real>(&self, img: &Tensor4<T>) -> Result<Tensor4<T>> {
        if self.kind == DegradationKind::Jpeg && img.c() == 3 {
            rgb_to_y(img)
        } else {
            Ok(img.clone())
        }
    }

    /// Degraded counterpart of [`Self::target`]. Super-resolution inputs are
    /// downscaled by `scale` and brought back to the original size, so input
    /// and output of the network share dimensions.
    pub fn apply<T: Real>(&self, img: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.validate()?;
        let img = self.target(img)?;
        match self.kind {
            DegradationKind::Awgn => Ok(add_awgn(&img, self.sigma, self.seed)),
            DegradationKind::Mosaic => mosaic_bayer(&img, self.pattern),
            DegradationKind::Jpeg => jpeg_degrade(&img, self.quality),
            DegradationKind::BicubicSr => {
                let s = self.scale as usize;
                let small = resize_to(&img, img.h().div_ceil(s).max(1), img.w().div_ceil(s).max(1))?;
                resize_to(&small, img.h(), img.w())
            }
        }
    }

    /// Pixels cropped from each border before scoring.
    pub fn score_border(&self) -> usize {
        if self.kind == DegradationKind::BicubicSr {
            self.scale as usize
        } else {
            0
        }
    }

    /// JPEG results are scored on luma; everything else on the full image
    /// unless the caller asks for Y.
    pub fn default_y_channel(&self) -> bool {
        self.kind == DegradationKind::Jpeg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(DegradationSpec::default().validate().is_ok());
        assert!(DegradationSpec::awgn(-1.0).validate().is_err());
        assert!(DegradationSpec::jpeg(0).validate().is_err());
        assert!(DegradationSpec::bicubic_sr(5).validate().is_err());
    }

    #[test]
    fn shapes() {
        let img = Tensor4::<f32>::filled([1, 3, 17, 22], 0.4);
        assert_eq!(DegradationSpec::jpeg(20).apply(&img).unwrap().dims(), [1, 1, 17, 22]);
        assert_eq!(DegradationSpec::jpeg(20).target(&img).unwrap().dims(), [1, 1, 17, 22]);
        assert_eq!(DegradationSpec::bicubic_sr(3).apply(&img).unwrap().dims(), img.dims());
        assert_eq!(DegradationSpec::mosaic(BayerPattern::Gbrg).apply(&img).unwrap().dims(), img.dims());
    }

    #[test]
    fn toml_round_trip() {
        let spec = DegradationSpec { kind: DegradationKind::BicubicSr, scale: 4, seed: 9, ..Default::default() };
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<DegradationSpec>(&text).unwrap(), spec);
        assert!(text.contains("kind = \"bicubic_sr\""));
    }
}
