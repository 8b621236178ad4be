use super::config::BlockConfig;
use super::layers::{Conv, Deconv, ResChain, ResChainCache};
use super::nonlocal::{NonLocalBlock, NonLocalCache};
use super::params::{Grads, ParamLayout, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::{self, ConvSpec, Real, Tensor4};

/// Smallest spatial extent allowed after the strided downscale.
pub const MIN_DOWNSCALED: usize = 3;

/// Attention-map branch:
/// `[NLB] → m RBs → stride conv → 2m RBs → deconv → m RBs → 1×1 conv → sigmoid`.
///
/// The output has the input's shape and every value lies in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct MaskBranch {
    pub features: usize,
    pub non_local: Option<NonLocalBlock>,
    pub pre: ResChain,
    pub down: Conv,
    pub mid: ResChain,
    pub up: Deconv,
    pub post: ResChain,
    pub out: Conv,
}

#[derive(Clone, Debug)]
pub struct MaskCache<T> {
    nl: Option<(Tensor4<T>, NonLocalCache<T>)>,
    pre: ResChainCache<T>,
    pre_out: Tensor4<T>,
    down_out: Tensor4<T>,
    mid: ResChainCache<T>,
    mid_out: Tensor4<T>,
    up_out: Tensor4<T>,
    post: ResChainCache<T>,
    post_out: Tensor4<T>,
    /// The sigmoid output.
    mask: Tensor4<T>,
}

impl MaskBranch {
    pub fn new(layout: &mut ParamLayout, prefix: &str, cfg: &BlockConfig) -> Self {
        let f = cfg.features;
        let s = cfg.downscale_stride;
        Self {
            features: f,
            non_local: cfg
                .non_local
                .then(|| NonLocalBlock::new(layout, &format!("{prefix}.nonlocal"), f, cfg.nlb_channels)),
            pre: ResChain::new(layout, &format!("{prefix}.pre"), f, cfg.m),
            down: Conv::new(layout, &format!("{prefix}.down"), ConvSpec::strided3x3(f, f, s)),
            mid: ResChain::new(layout, &format!("{prefix}.mid"), f, 2 * cfg.m),
            up: Deconv::new(layout, &format!("{prefix}.up"), ConvSpec::strided3x3(f, f, s)),
            post: ResChain::new(layout, &format!("{prefix}.post"), f, cfg.m),
            out: Conv::new(layout, &format!("{prefix}.out"), ConvSpec::pointwise(f, f)),
        }
    }

    fn check<T: Real>(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.features {
            return config_err(format!(
                "mask branch expects {} channels, got {}",
                self.features,
                x.c()
            ));
        }
        let (dh, dw) = self.down.spec.output_hw(x.h(), x.w())?;
        if dh < MIN_DOWNSCALED || dw < MIN_DOWNSCALED {
            return config_err(format!(
                "input {}x{} downscales to {dh}x{dw}, below the {MIN_DOWNSCALED}x{MIN_DOWNSCALED} minimum",
                x.h(),
                x.w()
            ));
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, MaskCache<T>)> {
        self.check(x)?;
        let nl = match &self.non_local {
            Some(block) => Some(block.forward(ps, x)?),
            None => None,
        };
        let entry = nl.as_ref().map(|(y, _)| y).unwrap_or(x);
        let (pre_out, pre) = self.pre.forward(ps, entry)?;
        let down_out = self.down.forward(ps, &pre_out)?;
        let (mid_out, mid) = self.mid.forward(ps, &down_out)?;
        let up_out = self.up.forward(ps, &mid_out, (pre_out.h(), pre_out.w()))?;
        let (post_out, post) = self.post.forward(ps, &up_out)?;
        let mask = tensor::sigmoid(&self.out.forward(ps, &post_out)?);
        let cache = MaskCache {
            nl,
            pre,
            pre_out,
            down_out,
            mid,
            mid_out,
            up_out,
            post,
            post_out,
            mask: mask.clone(),
        };
        Ok((mask, cache))
    }

    pub fn infer<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let entry = match &self.non_local {
            Some(block) => block.infer(ps, x)?,
            None => x.clone(),
        };
        let a = self.pre.infer(ps, &entry)?;
        let d = self.down.forward(ps, &a)?;
        let b = self.mid.infer(ps, &d)?;
        let u = self.up.forward(ps, &b, (a.h(), a.w()))?;
        let c = self.post.infer(ps, &u)?;
        Ok(tensor::sigmoid(&self.out.forward(ps, &c)?))
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        cache: &MaskCache<T>,
        dmask: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let d_logits = tensor::sigmoid_backward(&cache.mask, dmask)?;
        let d_post = self.out.backward(ps, &cache.post_out, &d_logits, grads)?;
        let d_up = self.post.backward(ps, &cache.up_out, &cache.post, &d_post, grads)?;
        let d_mid = self.up.backward(ps, &cache.mid_out, &d_up, grads)?;
        let d_down = self.mid.backward(ps, &cache.down_out, &cache.mid, &d_mid, grads)?;
        let d_pre = self.down.backward(ps, &cache.pre_out, &d_down, grads)?;
        let entry = cache.nl.as_ref().map(|(y, _)| y).unwrap_or(x);
        let d_entry = self.pre.backward(ps, entry, &cache.pre, &d_pre, grads)?;
        match (&self.non_local, &cache.nl) {
            (Some(block), Some((_, nl_cache))) => block.backward(ps, x, nl_cache, &d_entry, grads),
            _ => Ok(d_entry),
        }
    }
}
