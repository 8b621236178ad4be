use std::io::Write;
use std::path::Path;

use super::corpus::{to_channels, Corpus};
use super::dihedral::{dihedral, dihedral_inverse};
use crate::arch::{NetworkConfig, ParamStore, Rnan};
use crate::degrade::DegradationSpec;
use crate::error::{config_err, Result};
use crate::imageio::list_images;
use crate::metrics::{score, MetricResult};
use crate::tensor::{Real, Tensor4};

/// Average of the network output over the 8 dihedral transforms of `img`,
/// each mapped back before averaging.
pub fn self_ensemble_infer<T: Real>(net: &Rnan, store: &ParamStore<T>, img: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut acc = Tensor4::zeros(img.dims());
    for k in 0..8 {
        let out = net.infer(store, &dihedral(img, k))?;
        acc.add_assign(&dihedral_inverse(&out, k))?;
    }
    Ok(acc.scale(T::lit(0.125)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub self_ensemble: bool,
    /// Score the luma of RGB results instead of all channels.
    pub y_channel: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub metrics: MetricResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: MetricResult,
    pub skipped: usize,
}

impl EvalReport {
    fn from_rows(rows: Vec<EvalRow>, skipped: usize) -> Result<Self> {
        if rows.is_empty() {
            return config_err("no image could be evaluated");
        }
        let n = rows.len() as f64;
        let psnr_db = rows.iter().map(|r| r.metrics.psnr_db).sum::<f64>() / n;
        let ssim = rows.iter().map(|r| r.metrics.ssim).sum::<f64>() / n;
        Ok(Self { rows, mean: MetricResult { psnr_db, ssim }, skipped })
    }

    /// CSV with header `image,psnr_db,ssim`, one row per image and a final
    /// `mean` row. Infinite PSNR is written as `inf`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "image,psnr_db,ssim")?;
        let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.4}") };
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.image, fmt(r.metrics.psnr_db), fmt(r.metrics.ssim))?;
        }
        writeln!(w, "mean,{},{}", fmt(self.mean.psnr_db), fmt(self.mean.ssim))?;
        Ok(())
    }
}

/// Degrades every image with `spec` (image `i` uses seed `spec.seed + i`),
/// restores it and scores the raw, unclamped output against the clean image.
/// Images whose channel count does not fit the network are skipped with a
/// warning.
pub fn evaluate_corpus(
    corpus: &Corpus,
    spec: &DegradationSpec,
    store: &ParamStore<f32>,
    net_cfg: &NetworkConfig,
    opts: EvalOptions,
) -> Result<EvalReport> {
    spec.validate()?;
    let net = Rnan::new(net_cfg)?;
    store.check_layout(net.layout())?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (i, img) in corpus.images.iter().enumerate() {
        let clean = match to_channels(img.hq.clone(), net_cfg.in_channels).and_then(|t| spec.target(&t)) {
            Ok(t) if t.c() == net_cfg.in_channels => t,
            Ok(t) => {
                log::warn!("skipping {}: {} channels after degradation, network takes {}", img.name, t.c(), net_cfg.in_channels);
                skipped += 1;
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", img.name);
                skipped += 1;
                continue;
            }
        };
        let lq = spec.clone().with_seed(spec.seed.wrapping_add(i as u64)).apply(&clean)?;
        let restored = if opts.self_ensemble {
            self_ensemble_infer(&net, store, &lq)?
        } else {
            net.infer(store, &lq)?
        };
        let metrics = score(&restored, &clean, opts.y_channel, spec.score_border())?;
        rows.push(EvalRow { image: img.name.clone(), metrics });
    }
    EvalReport::from_rows(rows, skipped)
}

/// [`evaluate_corpus`] over the images of a directory; unreadable files and
/// images that cannot match the network's channels are skipped with a
/// warning.
pub fn evaluate(
    dataset_dir: &Path,
    spec: &DegradationSpec,
    store: &ParamStore<f32>,
    net_cfg: &NetworkConfig,
    opts: EvalOptions,
) -> Result<EvalReport> {
    let listed = list_images(dataset_dir)?.len();
    let corpus = Corpus::from_dir(dataset_dir, net_cfg.in_channels)?;
    if corpus.is_empty() {
        return config_err(format!("no usable images in {}", dataset_dir.display()));
    }
    let skipped = listed - corpus.len();
    let mut report = evaluate_corpus(&corpus, spec, store, net_cfg, opts)?;
    report.skipped += skipped;
    Ok(report)
}
