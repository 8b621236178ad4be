//! Non-local block with embedded-Gaussian affinity.
//!
//! For every position `i` of a feature map `x`:
//!
//! ```text
//! y_i = Σ_j softmax_j(query(x_i)ᵀ key(x_j)) · value(x_j)
//! z_i = out(y_i) + x_i
//! ```
//!
//! `query`, `key`, `value` and `out` are bias-free 1×1 convolutions. `out` starts at zero so a
//! freshly built block is the identity map. The affinity matrix covers all
//! `h·w` positions of each batch item; nothing is subsampled.

use super::layers::Conv;
use super::params::{Grads, ParamLayout, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::{self, gemm, Matrix, Real, Tensor4};

/// Affinity rows evaluated at once during cache-free inference.
const INFER_CHUNK_ELEMS: usize = 1 << 22;

#[derive(Clone, Debug)]
pub struct NonLocalBlock {
    pub features: usize,
    pub inner: usize,
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub out: Conv,
}

#[derive(Clone, Debug)]
pub struct NonLocalCache<T> {
    u: Tensor4<T>,
    v: Tensor4<T>,
    g: Tensor4<T>,
    /// Per batch item, the `(hw × hw)` row-softmaxed affinity.
    attn: Vec<Matrix<T>>,
    y: Tensor4<T>,
}

impl NonLocalBlock {
    pub fn new(layout: &mut ParamLayout, prefix: &str, features: usize, inner: usize) -> Self {
        use crate::tensor::ConvSpec;
        Self {
            features,
            inner,
            query: Conv::linear(layout, &format!("{prefix}.query"), ConvSpec::pointwise(features, inner)),
            key: Conv::linear(layout, &format!("{prefix}.key"), ConvSpec::pointwise(features, inner)),
            value: Conv::linear(layout, &format!("{prefix}.value"), ConvSpec::pointwise(features, inner)),
            out: Conv::linear_zeroed(layout, &format!("{prefix}.out"), ConvSpec::pointwise(inner, features)),
        }
    }

    fn check<T: Real>(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.features {
            return config_err(format!(
                "non-local block expects {} channels, got {}",
                self.features,
                x.c()
            ));
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, NonLocalCache<T>)> {
        self.check(x)?;
        let u = self.query.forward(ps, x)?;
        let v = self.key.forward(ps, x)?;
        let g = self.value.forward(ps, x)?;
        let mut attn = Vec::with_capacity(x.n());
        let mut ys = Vec::with_capacity(x.n());
        for n in 0..x.n() {
            let (un, vn, gn) = (u.item_matrix(n), v.item_matrix(n), g.item_matrix(n));
            let scores = tensor::ops::matmul_ex(&un, true, &vn, false)?;
            let a = tensor::softmax_rows(&scores);
            ys.push(tensor::ops::matmul_ex(&gn, false, &a, true)?);
            attn.push(a);
        }
        let y = Tensor4::from_matrices(&ys, x.h(), x.w())?;
        let mut z = self.out.forward(ps, &y)?;
        z.add_assign(x)?;
        Ok((z, NonLocalCache { u, v, g, attn, y }))
    }

    /// Forward pass without a cache; the affinity matrix is processed in row
    /// chunks so memory stays bounded on large images.
    pub fn infer<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let u = self.query.forward(ps, x)?;
        let v = self.key.forward(ps, x)?;
        let g = self.value.forward(ps, x)?;
        let (c, hw) = (self.inner, x.h() * x.w());
        let chunk = (INFER_CHUNK_ELEMS / hw.max(1)).clamp(1, hw.max(1));
        let mut y = Tensor4::zeros([x.n(), c, x.h(), x.w()]);
        let mut scores = vec![T::zero(); chunk * hw];
        let mut yt = vec![T::zero(); chunk * c];
        for n in 0..x.n() {
            let ut = u.item_matrix(n).transpose();
            let (vn, gn) = (v.item(n), g.item(n));
            let yn = y.item_mut(n);
            let mut start = 0;
            while start < hw {
                let rows = chunk.min(hw - start);
                let s = &mut scores[..rows * hw];
                gemm(false, false, rows, hw, c, T::one(), &ut.data[start * c..], vn, T::zero(), s);
                for r in 0..rows {
                    tensor::ops::softmax_in_place(&mut s[r * hw..(r + 1) * hw]);
                }
                let out = &mut yt[..rows * c];
                gemm(false, true, rows, c, hw, T::one(), s, gn, T::zero(), out);
                for r in 0..rows {
                    for ch in 0..c {
                        yn[ch * hw + start + r] = out[r * c + ch];
                    }
                }
                start += rows;
            }
        }
        let mut z = self.out.forward(ps, &y)?;
        z.add_assign(x)?;
        Ok(z)
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        cache: &NonLocalCache<T>,
        dz: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let dy = self.out.backward(ps, &cache.y, dz, grads)?;
        let (h, w) = (x.h(), x.w());
        let mut du = Vec::with_capacity(x.n());
        let mut dv = Vec::with_capacity(x.n());
        let mut dg = Vec::with_capacity(x.n());
        for n in 0..x.n() {
            let a = &cache.attn[n];
            let dyn_ = dy.item_matrix(n);
            let (un, vn, gn) = (cache.u.item_matrix(n), cache.v.item_matrix(n), cache.g.item_matrix(n));
            // y = g · aᵀ
            let da = tensor::ops::matmul_ex(&dyn_, true, &gn, false)?;
            dg.push(tensor::ops::matmul_ex(&dyn_, false, a, false)?);
            let ds = tensor::softmax_rows_backward(a, &da)?;
            // scores = uᵀ · v
            du.push(tensor::ops::matmul_ex(&vn, false, &ds, true)?);
            dv.push(tensor::ops::matmul_ex(&un, false, &ds, false)?);
        }
        let mut dx = dz.clone();
        dx.add_assign(&self.query.backward(ps, x, &Tensor4::from_matrices(&du, h, w)?, grads)?)?;
        dx.add_assign(&self.key.backward(ps, x, &Tensor4::from_matrices(&dv, h, w)?, grads)?)?;
        dx.add_assign(&self.value.backward(ps, x, &Tensor4::from_matrices(&dg, h, w)?, grads)?)?;
        Ok(dx)
    }
}
