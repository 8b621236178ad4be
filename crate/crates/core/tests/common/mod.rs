#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnan::arch::{NonLocalBlock, ParamStore};
use rnan::Tensor4;

pub fn random_tensor(dims: [usize; 4], seed: u64, scale: f64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(dims, |_| rng.gen_range(-scale..scale))
}

/// Overwrites every parameter, including zero-initialised ones, with
/// uniform values in `[-scale, scale)`.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn zero_all(store: &mut ParamStore<f64>) {
    for p in store.params_mut() {
        p.value.data_mut().fill(0.0);
    }
}

/// Non-local block evaluated position pair by position pair:
/// `z_i = W_z Σ_j softmax_j(uᵢᵀ vⱼ) gⱼ + x_i`.
pub fn nonlocal_oracle(nl: &NonLocalBlock, store: &ParamStore<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
    let (wu, wv, wg, wz) = (
        store.get(nl.query.weight),
        store.get(nl.key.weight),
        store.get(nl.value.weight),
        store.get(nl.out.weight),
    );
    let (f, c) = (nl.features, nl.inner);
    let (h, w) = (x.h(), x.w());
    let positions: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    let mut out = x.clone();
    for n in 0..x.n() {
        let embed = |m: &Tensor4<f64>, (py, px): (usize, usize)| -> Vec<f64> {
            (0..c).map(|k| (0..f).map(|ch| m.get([k, ch, 0, 0]) * x.get([n, ch, py, px])).sum()).collect()
        };
        let u: Vec<Vec<f64>> = positions.iter().map(|&p| embed(wu, p)).collect();
        let v: Vec<Vec<f64>> = positions.iter().map(|&p| embed(wv, p)).collect();
        let g: Vec<Vec<f64>> = positions.iter().map(|&p| embed(wg, p)).collect();
        for (i, &(py, px)) in positions.iter().enumerate() {
            let scores: Vec<f64> =
                (0..positions.len()).map(|j| (0..c).map(|k| u[i][k] * v[j][k]).sum()).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let y: Vec<f64> = (0..c)
                .map(|k| (0..positions.len()).map(|j| weights[j] / total * g[j][k]).sum())
                .collect();
            for ch in 0..f {
                let z: f64 = (0..c).map(|k| wz.get([ch, k, 0, 0]) * y[k]).sum();
                out.set([n, ch, py, px], x.get([n, ch, py, px]) + z);
            }
        }
    }
    out
}
