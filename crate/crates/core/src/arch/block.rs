use super::config::{BlockConfig, FusionMode};
use super::layers::{ResChain, ResChainCache};
use super::mask::{MaskBranch, MaskCache};
use super::nonlocal::{NonLocalBlock, NonLocalCache};
use super::params::{Grads, ParamLayout, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor4};

/// Combines trunk and mask outputs with the block input `u`.
///
/// `mask` is ignored (and may be `None`) for [`FusionMode::TrunkOnly`].
pub fn fuse<T: Real>(
    mode: FusionMode,
    trunk: &Tensor4<T>,
    mask: Option<&Tensor4<T>>,
    input: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let same = |t: &Tensor4<T>| t.dims() == input.dims();
    if !same(trunk) || mask.is_some_and(|m| !same(m)) {
        return config_err("fuse: trunk, mask and input dims differ");
    }
    let zip3 = |f: &dyn Fn(T, T, T) -> T| -> Result<Tensor4<T>> {
        let Some(m) = mask else {
            return config_err(format!("fusion mode {mode:?} needs a mask"));
        };
        let data = trunk
            .data()
            .iter()
            .zip(m.data())
            .zip(input.data())
            .map(|((&t, &m), &u)| f(t, m, u))
            .collect();
        Tensor4::from_vec(input.dims(), data)
    };
    match mode {
        FusionMode::ResidualAttention => zip3(&|t, m, u| t * m + u),
        FusionMode::MaskPlusOne => zip3(&|t, m, _| t * (m + T::one())),
        FusionMode::TrunkOnly => {
            let mut out = trunk.clone();
            out.add_assign(input)?;
            Ok(out)
        }
    }
}

/// Gradients of [`fuse`]: `(d_trunk, d_mask, d_input_direct)`.
pub fn fuse_backward<T: Real>(
    mode: FusionMode,
    trunk: &Tensor4<T>,
    mask: Option<&Tensor4<T>>,
    d_fused: &Tensor4<T>,
) -> Result<(Tensor4<T>, Option<Tensor4<T>>, Option<Tensor4<T>>)> {
    match (mode, mask) {
        (FusionMode::TrunkOnly, _) => Ok((d_fused.clone(), None, Some(d_fused.clone()))),
        (_, None) => config_err(format!("fusion mode {mode:?} needs a mask")),
        (_, Some(m)) => {
            let d_mask = crate::tensor::mul(d_fused, trunk)?;
            let d_trunk = match mode {
                FusionMode::ResidualAttention => crate::tensor::mul(d_fused, m)?,
                _ => crate::tensor::mul(d_fused, &m.map(|v| v + T::one()))?,
            };
            let direct = (mode == FusionMode::ResidualAttention).then(|| d_fused.clone());
            Ok((d_trunk, Some(d_mask), direct))
        }
    }
}

/// Residual (non-)local attention block:
/// `u = head(x)`, `fused = fuse(trunk(u), mask(u), u)`, `y = tail(fused)`.
///
/// Without a mask branch, a non-local block (if requested) sits in front of
/// the trunk instead.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub fusion: FusionMode,
    pub head: ResChain,
    pub trunk: ResChain,
    pub mask: Option<MaskBranch>,
    pub trunk_non_local: Option<NonLocalBlock>,
    pub tail: ResChain,
}

/// Intermediate branch outputs of one attention block.
#[derive(Clone, Debug)]
pub struct BranchOutputs<T> {
    pub input: Tensor4<T>,
    pub trunk: Tensor4<T>,
    pub mask: Option<Tensor4<T>>,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    head: ResChainCache<T>,
    u: Tensor4<T>,
    trunk_nl: Option<(Tensor4<T>, NonLocalCache<T>)>,
    trunk: ResChainCache<T>,
    trunk_out: Tensor4<T>,
    mask: Option<(Tensor4<T>, MaskCache<T>)>,
    fused: Tensor4<T>,
    tail: ResChainCache<T>,
}

impl AttentionBlock {
    pub fn new(layout: &mut ParamLayout, prefix: &str, cfg: &BlockConfig) -> Self {
        let f = cfg.features;
        let head = ResChain::new(layout, &format!("{prefix}.head"), f, cfg.q);
        let trunk_non_local = (!cfg.fusion.has_mask() && cfg.non_local).then(|| {
            NonLocalBlock::new(layout, &format!("{prefix}.trunk_nonlocal"), f, cfg.nlb_channels)
        });
        let trunk = ResChain::new(layout, &format!("{prefix}.trunk"), f, cfg.t);
        let mask = cfg.fusion.has_mask().then(|| MaskBranch::new(layout, &format!("{prefix}.mask"), cfg));
        let tail = ResChain::new(layout, &format!("{prefix}.tail"), f, cfg.q);
        Self { fusion: cfg.fusion, head, trunk, mask, trunk_non_local, tail }
    }

    pub fn is_non_local(&self) -> bool {
        self.trunk_non_local.is_some() || self.mask.as_ref().is_some_and(|m| m.non_local.is_some())
    }

    /// Runs the head chain and both branches, returning their outputs before fusion.
    pub fn branches<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor4<T>) -> Result<BranchOutputs<T>> {
        let u = self.head.infer(ps, x)?;
        let trunk_in = match &self.trunk_non_local {
            Some(nl) => nl.infer(ps, &u)?,
            None => u.clone(),
        };
        let trunk = self.trunk.infer(ps, &trunk_in)?;
        let mask = match &self.mask {
            Some(m) => Some(m.infer(ps, &u)?),
            None => None,
        };
        Ok(BranchOutputs { input: u, trunk, mask })
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, AttentionCache<T>)> {
        let (u, head) = self.head.forward(ps, x)?;
        let trunk_nl = match &self.trunk_non_local {
            Some(nl) => Some(nl.forward(ps, &u)?),
            None => None,
        };
        let trunk_in = trunk_nl.as_ref().map(|(y, _)| y).unwrap_or(&u);
        let (trunk_out, trunk) = self.trunk.forward(ps, trunk_in)?;
        let mask = match &self.mask {
            Some(m) => Some(m.forward(ps, &u)?),
            None => None,
        };
        let fused = fuse(self.fusion, &trunk_out, mask.as_ref().map(|(m, _)| m), &u)?;
        let (y, tail) = self.tail.forward(ps, &fused)?;
        Ok((y, AttentionCache { head, u, trunk_nl, trunk, trunk_out, mask, fused, tail }))
    }

    pub fn infer<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let b = self.branches(ps, x)?;
        let fused = fuse(self.fusion, &b.trunk, b.mask.as_ref(), &b.input)?;
        self.tail.infer(ps, &fused)
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor4<T>,
        cache: &AttentionCache<T>,
        dy: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let d_fused = self.tail.backward(ps, &cache.fused, &cache.tail, dy, grads)?;
        let mask_out = cache.mask.as_ref().map(|(m, _)| m);
        let (d_trunk, d_mask, direct) = fuse_backward(self.fusion, &cache.trunk_out, mask_out, &d_fused)?;

        let trunk_in = cache.trunk_nl.as_ref().map(|(y, _)| y).unwrap_or(&cache.u);
        let mut du = self.trunk.backward(ps, trunk_in, &cache.trunk, &d_trunk, grads)?;
        if let (Some(nl), Some((_, nl_cache))) = (&self.trunk_non_local, &cache.trunk_nl) {
            du = nl.backward(ps, &cache.u, nl_cache, &du, grads)?;
        }
        if let (Some(branch), Some((_, mcache)), Some(dm)) = (&self.mask, &cache.mask, d_mask) {
            du.add_assign(&branch.backward(ps, &cache.u, mcache, &dm, grads)?)?;
        }
        if let Some(direct) = direct {
            du.add_assign(&direct)?;
        }
        self.head.backward(ps, x, &cache.head, &du, grads)
    }
}
