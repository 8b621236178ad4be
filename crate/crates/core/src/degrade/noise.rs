use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Real, Tensor4};

/// Adds i.i.d. `N(0, (sigma/255)²)` noise to an image in `[0, 1]`.
///
/// Samples come from a ChaCha8 stream seeded with `seed`, one standard normal
/// per element in storage order. The result is not clipped.
pub fn add_awgn<T: Real>(img: &Tensor4<T>, sigma: f64, seed: u64) -> Tensor4<T> {
    if sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = sigma / 255.0;
    let mut out = img.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = *v + T::lit(std * z);
    }
    out
}
