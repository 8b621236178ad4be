use crate::arch::{Grads, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of every parameter; increments the step counter.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() {
        return config_err(format!("adam: {} gradients for {} parameters", grads.len(), store.len()));
    }
    for (p, g) in store.params().iter().zip(&grads.0) {
        if p.value.dims() != g.dims() {
            return config_err(format!("adam: gradient for {} has dims {:?}, expected {:?}", p.name, g.dims(), p.value.dims()));
        }
    }
    let t = store.step() + 1;
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let (inv_c1, inv_c2) = (T::lit(1.0 / c1), T::lit(1.0 / c2));
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (p, g) in store.params_mut().iter_mut().zip(&grads.0) {
        let value = p.value.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..value.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            let m_hat = m[i] * inv_c1;
            let v_hat = v[i] * inv_c2;
            value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.set_step(t);
    Ok(())
}
