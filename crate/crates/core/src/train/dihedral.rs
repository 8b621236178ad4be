use crate::tensor::{Real, Tensor4};

/// The 8 symmetries of the square. `k & 3` counts 90° counter-clockwise
/// rotations, `k & 4` mirrors left-right before rotating.
pub fn dihedral<T: Real>(img: &Tensor4<T>, k: u8) -> Tensor4<T> {
    let mut out = if k & 4 != 0 { mirror(img) } else { img.clone() };
    for _ in 0..(k & 3) {
        out = rotate90(&out);
    }
    out
}

/// Undoes [`dihedral`] with the same `k`.
pub fn dihedral_inverse<T: Real>(img: &Tensor4<T>, k: u8) -> Tensor4<T> {
    let mut out = img.clone();
    for _ in 0..(4 - (k & 3)) % 4 {
        out = rotate90(&out);
    }
    if k & 4 != 0 {
        mirror(&out)
    } else {
        out
    }
}

fn mirror<T: Real>(img: &Tensor4<T>) -> Tensor4<T> {
    let w = img.w();
    Tensor4::from_fn(img.dims(), |[n, c, y, x]| img.get([n, c, y, w - 1 - x]))
}

/// Counter-clockwise: output `(y, x)` reads input `(x, w' - 1 - y)`.
fn rotate90<T: Real>(img: &Tensor4<T>) -> Tensor4<T> {
    let (h, w) = (img.h(), img.w());
    Tensor4::from_fn([img.n(), img.c(), w, h], |[n, c, y, x]| img.get([n, c, x, w - 1 - y]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_are_distinct_and_invertible() {
        let img = Tensor4::from_fn([1, 2, 3, 4], |[_, c, y, x]| (c * 100 + y * 10 + x) as f64);
        let all: Vec<_> = (0..8).map(|k| dihedral(&img, k)).collect();
        for (k, t) in all.iter().enumerate() {
            assert_eq!(dihedral_inverse(t, k as u8), img);
            for other in &all[k + 1..] {
                assert_ne!(t, other);
            }
        }
        // One rotation of a 3×4 image gives 4×3 with the top-right corner at top-left.
        let r = dihedral(&img, 1);
        assert_eq!(r.dims(), [1, 2, 4, 3]);
        assert_eq!(r.get([0, 0, 0, 0]), 3.0);
    }
}
