//! Parameterised convolutions and the simplified residual block.
//!
//! Backward functions take the layer's forward input explicitly; callers keep
//! the activations they fed in, caches only hold what the layer produced
//! internally.

use super::params::{Grads, Init, ParamId, ParamLayout, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::{self, ConvSpec, Real, Tensor4};

/// Convolution, with or without a bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, prefix: &str, spec: ConvSpec) -> Self {
        Self::with_init(layout, prefix, spec, Self::default_init(&spec), true)
    }

    /// Weight and bias both start at zero.
    pub fn zeroed(layout: &mut ParamLayout, prefix: &str, spec: ConvSpec) -> Self {
        Self::with_init(layout, prefix, spec, Init::Zeros, true)
    }

    /// A plain linear map (no bias) with the default initialisation.
    pub fn linear(layout: &mut ParamLayout, prefix: &str, spec: ConvSpec) -> Self {
        Self::with_init(layout, prefix, spec, Self::default_init(&spec), false)
    }

    /// A zero-initialised linear map (no bias).
    pub fn linear_zeroed(layout: &mut ParamLayout, prefix: &str, spec: ConvSpec) -> Self {
        Self::with_init(layout, prefix, spec, Init::Zeros, false)
    }

    fn default_init(spec: &ConvSpec) -> Init {
        Init::fan_in(spec.in_channels * spec.kernel.0 * spec.kernel.1)
    }

    fn with_init(layout: &mut ParamLayout, prefix: &str, spec: ConvSpec, init: Init, bias: bool) -> Self {
        let weight = layout.register(format!("{prefix}.weight"), spec.weight_dims(), init);
        let bias = bias.then(|| layout.register(format!("{prefix}.bias"), [1, spec.out_channels, 1, 1], init));
        Self { spec, weight, bias }
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let w = ps.get(self.weight);
        match self.bias {
            Some(b) => tensor::conv2d(x, w, ps.get(b).data(), &self.spec),
            None => tensor::conv2d(x, w, &vec![T::zero(); self.spec.out_channels], &self.spec),
        }
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        dy: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let g = tensor::conv2d_backward(x, ps.get(self.weight), &self.spec, dy)?;
        grads.accumulate(self.weight, &g.dw)?;
        if let Some(b) = self.bias {
            grads.accumulate_slice(b, &g.db)?;
        }
        Ok(g.dx)
    }
}

/// Transposed convolution with bias, restoring a recorded spatial size.
#[derive(Clone, Debug)]
pub struct Deconv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Deconv {
    pub fn new(layout: &mut ParamLayout, prefix: &str, spec: ConvSpec) -> Self {
        let init = Init::fan_in(spec.out_channels * spec.kernel.0 * spec.kernel.1);
        let weight = layout.register(format!("{prefix}.weight"), spec.transpose_weight_dims(), init);
        let bias = layout.register(format!("{prefix}.bias"), [1, spec.out_channels, 1, 1], init);
        Self { spec, weight, bias }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        target_hw: (usize, usize),
    ) -> Result<Tensor4<T>> {
        tensor::conv2d_transpose(x, ps.get(self.weight), ps.get(self.bias).data(), &self.spec, target_hw)
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        dy: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let g = tensor::conv2d_transpose_backward(x, ps.get(self.weight), &self.spec, dy)?;
        grads.accumulate(self.weight, &g.dw)?;
        grads.accumulate_slice(self.bias, &g.db)?;
        Ok(g.dx)
    }
}

/// conv3×3 → ReLU → conv3×3, plus identity skip. No normalisation, no pooling.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub features: usize,
    pub conv1: Conv,
    pub conv2: Conv,
}

#[derive(Clone, Debug)]
pub struct ResBlockCache<T> {
    pre_act: Tensor4<T>,
    act: Tensor4<T>,
}

impl ResBlock {
    pub fn new(layout: &mut ParamLayout, prefix: &str, features: usize) -> Self {
        Self {
            features,
            conv1: Conv::new(layout, &format!("{prefix}.conv1"), ConvSpec::same3x3(features, features)),
            conv2: Conv::new(layout, &format!("{prefix}.conv2"), ConvSpec::same3x3(features, features)),
        }
    }

    fn check<T: Real>(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.features {
            return config_err(format!(
                "residual block expects {} channels, got {}",
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
    ) -> Result<(Tensor4<T>, ResBlockCache<T>)> {
        self.check(x)?;
        let pre_act = self.conv1.forward(ps, x)?;
        let act = tensor::relu(&pre_act);
        let mut y = self.conv2.forward(ps, &act)?;
        y.add_assign(x)?;
        Ok((y, ResBlockCache { pre_act, act }))
    }

    pub fn infer<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let act = tensor::relu(&self.conv1.forward(ps, x)?);
        let mut y = self.conv2.forward(ps, &act)?;
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        cache: &ResBlockCache<T>,
        dy: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let d_act = self.conv2.backward(ps, &cache.act, dy, grads)?;
        let d_pre = tensor::relu_backward(&cache.pre_act, &d_act)?;
        let mut dx = self.conv1.backward(ps, x, &d_pre, grads)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }
}

/// A sequence of residual blocks applied back to back.
#[derive(Clone, Debug, Default)]
pub struct ResChain {
    pub blocks: Vec<ResBlock>,
}

#[derive(Clone, Debug)]
pub struct ResChainCache<T> {
    /// Output of every block but the last (the inputs of blocks 1..).
    inner: Vec<Tensor4<T>>,
    caches: Vec<ResBlockCache<T>>,
}

impl ResChain {
    pub fn new(layout: &mut ParamLayout, prefix: &str, features: usize, count: usize) -> Self {
        Self {
            blocks: (0..count)
                .map(|i| ResBlock::new(layout, &format!("{prefix}.{i}"), features))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, ResChainCache<T>)> {
        let mut inner = Vec::with_capacity(self.blocks.len().saturating_sub(1));
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut cur: Option<Tensor4<T>> = None;
        for block in &self.blocks {
            let input = cur.as_ref().unwrap_or(x);
            let (y, c) = block.forward(ps, input)?;
            caches.push(c);
            if let Some(prev) = cur.replace(y) {
                inner.push(prev);
            }
        }
        let y = cur.unwrap_or_else(|| x.clone());
        Ok((y, ResChainCache { inner, caches }))
    }

    pub fn infer<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.infer(ps, &cur)?;
        }
        Ok(cur)
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        cache: &ResChainCache<T>,
        dy: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let mut grad = dy.clone();
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let input = if i == 0 { x } else { &cache.inner[i - 1] };
            grad = block.backward(ps, input, &cache.caches[i], &grad, grads)?;
        }
        Ok(grad)
    }
}
