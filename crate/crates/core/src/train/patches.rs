use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::corpus::Corpus;
use super::dihedral::dihedral;
use crate::degrade::{DegradationKind, DegradationSpec};
use crate::error::{config_err, Result};
use crate::tensor::Tensor4;

/// An aligned low-/high-quality training crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lq: Tensor4<f32>,
    pub hq: Tensor4<f32>,
    /// Index of the source image in the corpus.
    pub image: usize,
    pub top: usize,
    pub left: usize,
    /// Dihedral transform applied after cropping (0 = none).
    pub transform: u8,
}

/// Anything that yields one training batch per iteration.
pub trait BatchSource: Sync {
    fn batch(&self, iter: u64) -> Result<Vec<PatchPair>>;
}

/// Seeded, iteration-indexed random crops from a corpus.
///
/// Batch `iter` comes from ChaCha8 stream `iter` of `cfg.seed`, so batches
/// can be drawn in any order. Per patch the generator yields, in order:
/// image index, top, left, transform (when augmenting) and the seed of the
/// degradation. Super-resolution inputs are degraded once per full image and
/// cropped at the same location as the clean image.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    corpus: Corpus,
    spec: DegradationSpec,
    cfg: TrainConfig,
    eligible: Vec<usize>,
    degraded: Option<Vec<Tensor4<f32>>>,
}

impl PatchSampler {
    pub fn new(corpus: Corpus, spec: DegradationSpec, cfg: TrainConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        if corpus.is_empty() {
            return config_err("training corpus is empty");
        }
        let p = cfg.patch_size;
        let mut eligible = Vec::new();
        for (i, img) in corpus.images.iter().enumerate() {
            if img.hq.h() >= p && img.hq.w() >= p {
                eligible.push(i);
            } else {
                log::warn!("skipping {} ({}×{}): smaller than the {p}×{p} patch", img.name, img.hq.h(), img.hq.w());
            }
        }
        if eligible.is_empty() {
            return config_err(format!("no corpus image is at least {p}×{p}"));
        }
        let degraded = match spec.kind {
            DegradationKind::BicubicSr => Some(
                corpus
                    .images
                    .iter()
                    .map(|img| spec.apply(&img.hq))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(Self { corpus, spec, cfg, eligible, degraded })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn sample(&self, iter: u64) -> Result<Vec<PatchPair>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(iter);
        let p = self.cfg.patch_size;
        (0..self.cfg.batch_size)
            .map(|_| {
                let image = self.eligible[rng.gen_range(0..self.eligible.len())];
                let hq_full = &self.corpus.images[image].hq;
                let top = rng.gen_range(0..=hq_full.h() - p);
                let left = rng.gen_range(0..=hq_full.w() - p);
                let transform = if self.cfg.augment { rng.gen_range(0..8u8) } else { 0 };
                let noise_seed: u64 = rng.gen();
                let hq = dihedral(&crop(hq_full, top, left, p), transform);
                let lq = match &self.degraded {
                    Some(lq_full) => dihedral(&crop(&lq_full[image], top, left, p), transform),
                    None => self.spec.clone().with_seed(noise_seed).apply(&hq)?,
                };
                let hq = self.spec.target(&hq)?;
                Ok(PatchPair { lq, hq, image, top, left, transform })
            })
            .collect()
    }
}

impl BatchSource for PatchSampler {
    fn batch(&self, iter: u64) -> Result<Vec<PatchPair>> {
        self.sample(iter)
    }
}

/// The same pair at every iteration.
#[derive(Clone, Debug)]
pub struct FixedPair(pub PatchPair);

impl BatchSource for FixedPair {
    fn batch(&self, _iter: u64) -> Result<Vec<PatchPair>> {
        Ok(vec![self.0.clone()])
    }
}

/// One batch of training pairs for iteration `iter`.
pub fn sample_patches(corpus: &Corpus, spec: &DegradationSpec, cfg: &TrainConfig, iter: u64) -> Result<Vec<PatchPair>> {
    PatchSampler::new(corpus.clone(), spec.clone(), cfg.clone())?.sample(iter)
}

pub(crate) fn crop(img: &Tensor4<f32>, top: usize, left: usize, size: usize) -> Tensor4<f32> {
    Tensor4::from_fn([1, img.c(), size, size], |[_, c, y, x]| img.get([0, c, top + y, left + x]))
}
