use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::adam::{adam_step, AdamConfig};
use super::config::TrainConfig;
use super::corpus::Corpus;
use super::loss::l2_loss;
use super::patches::{BatchSource, PatchPair, PatchSampler};
use crate::arch::{save_checkpoint, Grads, NetworkConfig, ParamStore, Rnan};
use crate::degrade::DegradationSpec;
use crate::error::{config_err, Error, Result};

/// Worker threads from `RNAN_THREADS` (default 1).
pub fn threads_from_env() -> usize {
    std::env::var("RNAN_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n >= 1).unwrap_or(1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where `loss.csv` and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
    /// Starting parameters; fresh ones from `TrainConfig::seed` otherwise.
    pub init: Option<ParamStore<f32>>,
    /// Log an info line every this many iterations (0 = never).
    pub progress_every: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParamStore<f32>,
    pub log: Vec<LossRecord>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

/// Mean loss over the batch and summed parameter gradients of that mean.
///
/// Items are processed independently and their gradients reduced in item
/// order, so the result does not depend on `threads`.
pub fn batch_gradients(
    net: &Rnan,
    store: &ParamStore<f32>,
    batch: &[PatchPair],
    threads: usize,
) -> Result<(f64, Grads<f32>)> {
    if batch.is_empty() {
        return config_err("empty training batch");
    }
    let scale = 1.0 / batch.len() as f32;
    let item = |pair: &PatchPair| -> Result<(f64, Grads<f32>)> {
        let (pred, cache) = net.forward(store, &pair.lq)?;
        let (loss, mut d_pred) = l2_loss(&pred, &pair.hq)?;
        d_pred = d_pred.scale(scale);
        let mut grads = store.zero_grads();
        net.backward(store, &pair.lq, &cache, &d_pred, &mut grads)?;
        Ok((f64::from(loss), grads))
    };
    let threads = threads.clamp(1, batch.len());
    let results: Vec<Result<(f64, Grads<f32>)>> = if threads == 1 {
        batch.iter().map(item).collect()
    } else {
        let per = batch.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|chunk| s.spawn(move || chunk.iter().map(item).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("training worker panicked")).collect()
        })
    };
    let mut total = 0.0;
    let mut grads: Option<Grads<f32>> = None;
    for r in results {
        let (loss, g) = r?;
        total += loss;
        match grads.as_mut() {
            Some(acc) => acc.merge(&g)?,
            None => grads = Some(g),
        }
    }
    Ok((total / batch.len() as f64, grads.expect("non-empty batch")))
}

/// Runs `train_cfg.max_iters` steps of sample, forward, L2 loss, backward and
/// Adam with the step schedule.
///
/// With an output directory, writes `loss.csv` (`iter,lr,loss`, one row per
/// iteration, loss measured before the update), `ckpt_{iter}.rnan` every
/// `checkpoint_every` iterations and `model.rnan` at the end, all with Adam
/// moments. A non-finite loss or gradient aborts with [`Error::Diverged`].
pub fn train(
    source: &dyn BatchSource,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let net = Rnan::new(net_cfg)?;
    let mut store = match &opts.init {
        Some(s) => {
            s.check_layout(net.layout())?;
            s.clone()
        }
        None => net.init_params::<f32>(train_cfg.seed),
    };
    let adam = AdamConfig { beta1: train_cfg.adam_beta1, beta2: train_cfg.adam_beta2, eps: train_cfg.adam_eps };
    let mut csv = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = BufWriter::new(File::create(dir.join("loss.csv"))?);
            writeln!(f, "iter,lr,loss")?;
            Some(f)
        }
        None => None,
    };
    let threads = opts.threads.max(1);
    let mut log = Vec::with_capacity(train_cfg.max_iters as usize);
    for iter in 0..train_cfg.max_iters {
        let lr = train_cfg.lr_at(iter);
        let batch = source.batch(iter)?;
        let (loss, grads) = batch_gradients(&net, &store, &batch, threads)?;
        let grad_norm = grads.global_norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged { iter, lr, grad_norm });
        }
        adam_step(&mut store, &grads, lr, &adam)?;
        log.push(LossRecord { iter, lr, loss });
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{iter},{lr:e},{loss:e}")?;
        }
        let done = iter + 1;
        if opts.progress_every > 0 && done % opts.progress_every == 0 {
            log::info!("iter {done}/{} lr {lr:.3e} loss {loss:.6e}", train_cfg.max_iters);
        }
        if let Some(dir) = &opts.out_dir {
            if train_cfg.checkpoint_every > 0 && done % train_cfg.checkpoint_every == 0 && done < train_cfg.max_iters {
                save_checkpoint(dir.join(format!("ckpt_{done:07}.rnan")), net_cfg, &store, true)?;
            }
        }
    }
    if let Some(mut f) = csv {
        f.flush()?;
    }
    if let Some(dir) = &opts.out_dir {
        save_checkpoint(dir.join("model.rnan"), net_cfg, &store, true)?;
    }
    Ok(TrainOutcome { store, log })
}

/// [`train`] on random crops of `corpus`.
pub fn train_on_corpus(
    corpus: &Corpus,
    spec: &DegradationSpec,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let sampler = PatchSampler::new(corpus.clone(), spec.clone(), train_cfg.clone())?;
    train(&sampler, net_cfg, train_cfg, opts)
}

pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("model.rnan")
}
