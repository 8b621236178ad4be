//! 8-bit image files: PNG through the `image` crate and binary PGM/PPM
//! (maxval 255) handled directly.
//!
//! Images load as `(1, c, h, w)` tensors in `[0, 1]` with `c` = 1 (gray) or
//! 3 (RGB). Saving clamps to `[0, 1]` and rounds to 8 bits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{config_err, Error, Result};
use crate::tensor::{Real, Tensor4};

const EXTENSIONS: [&str; 3] = ["png", "pgm", "ppm"];

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn is_image_path(path: &Path) -> bool {
    EXTENSIONS.contains(&extension(path).as_str())
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_image_path(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn from_bytes(bytes: &[u8], channels: usize, h: usize, w: usize) -> Result<Tensor4<f32>> {
    let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    let interleaved = Tensor4::from_vec([1, h, w, channels], data)?;
    Ok(Tensor4::from_fn([1, channels, h, w], |[_, c, y, x]| interleaved.get([0, y, x, c])))
}

/// Interleaved 8-bit samples (`h·w·c`).
pub fn to_bytes<T: Real>(img: &Tensor4<T>, item: usize) -> Vec<u8> {
    let (c, h, w) = (img.c(), img.h(), img.w());
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get([item, ch, y, x]).to_f64().unwrap_or(0.0);
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn load_image(path: &Path) -> Result<Tensor4<f32>> {
    match extension(path).as_str() {
        "pgm" | "ppm" => load_pnm(path),
        _ => {
            let img = image::open(path)?;
            let color = img.color();
            let (w, h) = (img.width() as usize, img.height() as usize);
            if color.has_color() {
                from_bytes(img.to_rgb8().as_raw(), 3, h, w)
            } else {
                from_bytes(img.to_luma8().as_raw(), 1, h, w)
            }
        }
    }
}

/// Writes item 0 of `img`; the format follows the file extension.
pub fn save_image<T: Real>(img: &Tensor4<T>, path: &Path) -> Result<()> {
    let (c, h, w) = (img.c(), img.h(), img.w());
    if img.n() != 1 || !(c == 1 || c == 3) {
        return config_err(format!("cannot save a {:?} tensor as an image", img.dims()));
    }
    let bytes = to_bytes(img, 0);
    match extension(path).as_str() {
        "png" => {
            let color = if c == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
            image::save_buffer(path, &bytes, w as u32, h as u32, color)?;
            Ok(())
        }
        "pgm" | "ppm" => {
            let magic = if c == 1 { "P5" } else { "P6" };
            let mut f = fs::File::create(path)?;
            write!(f, "{magic}\n{w} {h}\n255\n")?;
            f.write_all(&bytes)?;
            Ok(())
        }
        other => config_err(format!("unsupported image extension {other:?} for {}", path.display())),
    }
}

fn load_pnm(path: &Path) -> Result<Tensor4<f32>> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("only binary P5/P6 files are supported")),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let len = w * h * channels;
    if bytes.len() < pos + len {
        return Err(bad("truncated raster"));
    }
    from_bytes(&bytes[pos..pos + len], channels, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(c: usize) -> Tensor4<f32> {
        Tensor4::from_fn([1, c, 5, 7], |[_, ch, y, x]| ((ch * 50 + y * 20 + x * 3) % 256) as f32 / 255.0)
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for (c, ext) in [(1, "png"), (3, "png"), (1, "pgm"), (3, "ppm")] {
            let path = dir.path().join(format!("img{c}.{ext}"));
            let img = sample(c);
            save_image(&img, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img, "{ext} c={c}");
        }
        assert_eq!(list_images(dir.path()).unwrap().len(), 4);
    }

    #[test]
    fn saving_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let img = Tensor4::from_vec([1, 1, 1, 3], vec![-0.2f32, 0.5, 1.7]).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }
}
