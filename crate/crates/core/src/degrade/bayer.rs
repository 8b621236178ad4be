use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::tensor::{Real, Tensor4};

/// Colour-filter-array layout, named by the 2×2 tile read row by row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    /// Channel index (0 = R, 1 = G, 2 = B) sampled at pixel `(y, x)`.
    pub fn channel_at(self, y: usize, x: usize) -> usize {
        let tile = match self {
            BayerPattern::Rggb => [0, 1, 1, 2],
            BayerPattern::Bggr => [2, 1, 1, 0],
            BayerPattern::Grbg => [1, 0, 2, 1],
            BayerPattern::Gbrg => [1, 2, 0, 1],
        };
        tile[(y % 2) * 2 + x % 2]
    }
}

impl fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        };
        f.write_str(s)
    }
}

impl FromStr for BayerPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(BayerPattern::Rggb),
            "BGGR" => Ok(BayerPattern::Bggr),
            "GRBG" => Ok(BayerPattern::Grbg),
            "GBRG" => Ok(BayerPattern::Gbrg),
            _ => config_err(format!("unknown Bayer pattern {s:?}")),
        }
    }
}

/// Keeps, at every pixel, only the channel the pattern samples there; the
/// other two channels become zero.
pub fn mosaic_bayer<T: Real>(img: &Tensor4<T>, pattern: BayerPattern) -> Result<Tensor4<T>> {
    if img.c() != 3 {
        return config_err(format!("mosaicing needs 3 channels, got {}", img.c()));
    }
    let mut out = img.clone();
    for n in 0..img.n() {
        for c in 0..3 {
            for y in 0..img.h() {
                for x in 0..img.w() {
                    if pattern.channel_at(y, x) != c {
                        out.set([n, c, y, x], T::zero());
                    }
                }
            }
        }
    }
    Ok(out)
}
