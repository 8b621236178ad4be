use super::block::{AttentionBlock, AttentionCache};
use super::config::NetworkConfig;
use super::layers::Conv;
use super::params::{Grads, ParamLayout, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::{ConvSpec, Real, Tensor4};

/// The full restoration network:
/// `head conv → attention blocks → tail conv (+ input image)`.
#[derive(Clone, Debug)]
pub struct Rnan {
    cfg: NetworkConfig,
    layout: ParamLayout,
    pub head: Conv,
    pub blocks: Vec<AttentionBlock>,
    pub tail: Conv,
}

#[derive(Clone, Debug)]
pub struct RnanCache<T> {
    feats: Vec<Tensor4<T>>,
    blocks: Vec<AttentionCache<T>>,
}

impl Rnan {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layout = ParamLayout::default();
        let f = cfg.block.features;
        let head = Conv::new(&mut layout, "head", ConvSpec::same3x3(cfg.in_channels, f));
        let blocks = (0..cfg.num_blocks())
            .map(|i| AttentionBlock::new(&mut layout, &format!("blocks.{i}"), &cfg.block_config(i)))
            .collect();
        let tail = Conv::new(&mut layout, "tail", ConvSpec::same3x3(f, cfg.in_channels));
        Ok(Self { cfg: cfg.clone(), layout, head, blocks, tail })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Fresh parameters drawn from the per-layer init rules.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        ParamStore::initialize(&self.layout, seed)
    }

    fn check<T: Real>(&self, img: &Tensor4<T>) -> Result<()> {
        if img.c() != self.cfg.in_channels {
            return config_err(format!(
                "network expects {} image channels, got {}",
                self.cfg.in_channels,
                img.c()
            ));
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        img: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, RnanCache<T>)> {
        self.check(img)?;
        let mut feats = vec![self.head.forward(ps, img)?];
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(ps, feats.last().expect("head output"))?;
            feats.push(y);
            caches.push(c);
        }
        let mut out = self.tail.forward(ps, feats.last().expect("features"))?;
        if self.cfg.global_residual {
            out.add_assign(img)?;
        }
        Ok((out, RnanCache { feats, blocks: caches }))
    }

    /// Inference without caches. Output is not clamped.
    pub fn infer<T: Real>(&self, ps: &ParamStore<T>, img: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(img)?;
        let mut f = self.head.forward(ps, img)?;
        for block in &self.blocks {
            f = block.infer(ps, &f)?;
        }
        let mut out = self.tail.forward(ps, &f)?;
        if self.cfg.global_residual {
            out.add_assign(img)?;
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input image.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        img: &Tensor4<T>,
        cache: &RnanCache<T>,
        d_out: &Tensor4<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor4<T>> {
        let last = cache.feats.last().expect("features");
        let mut d = self.tail.backward(ps, last, d_out, grads)?;
        for (i, block) in self.blocks.iter().enumerate().rev() {
            d = block.backward(ps, &cache.feats[i], &cache.blocks[i], &d, grads)?;
        }
        let mut d_img = self.head.backward(ps, img, &d, grads)?;
        if self.cfg.global_residual {
            d_img.add_assign(d_out)?;
        }
        Ok(d_img)
    }

    /// Learnable scalars grouped by top-level module (`head`, `blocks.i`, `tail`).
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for spec in self.layout.specs() {
            let key = match spec.name.split('.').collect::<Vec<_>>().as_slice() {
                ["blocks", i, ..] => format!("blocks.{i}"),
                [first, ..] => first.to_string(),
                [] => String::new(),
            };
            match groups.last_mut() {
                Some((k, n)) if *k == key => *n += spec.numel(),
                _ => groups.push((key, spec.numel())),
            }
        }
        groups
    }
}

/// Exact number of learnable scalars (weights and biases) of the network
/// described by `cfg`.
pub fn count_parameters(cfg: &NetworkConfig) -> Result<usize> {
    Ok(Rnan::new(cfg)?.layout().total_scalars())
}
