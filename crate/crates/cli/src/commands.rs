use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rnan::arch::{count_parameters, load_checkpoint, Checkpoint, Rnan};
use rnan::degrade::{DegradationKind, DegradationSpec};
use rnan::gradsuite::{run_seed, TOLERANCE};
use rnan::imageio::{is_image_path, list_images, load_image, save_image};
use rnan::metrics::psnr;
use rnan::train::{
    evaluate, final_checkpoint_path, self_ensemble_infer, threads_from_env, to_channels, train_on_corpus, Corpus,
    EvalOptions, TrainOptions,
};
use rnan::Tensor4;

use crate::config::CliConfig;
use crate::{Cli, Command};

/// Seeds the gradient suite runs when `--seed` is not given.
const GRADCHECK_SEEDS: u64 = 5;

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Degrade => degrade(&cfg),
        Command::Train => train(cli, &cfg),
        Command::Infer => infer(cli, &cfg),
        Command::Eval => eval(cli, &cfg),
        Command::Gradcheck => gradcheck(cli),
        Command::Params => params(&cfg),
    }
}

/// Config file values with command-line overrides applied.
fn resolve(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let spec = &mut cfg.degradation;
    if let Some(sigma) = cli.sigma {
        *spec = DegradationSpec { kind: DegradationKind::Awgn, sigma, ..spec.clone() };
    }
    if let Some(quality) = cli.quality {
        *spec = DegradationSpec { kind: DegradationKind::Jpeg, quality, ..spec.clone() };
    }
    if let Some(scale) = cli.scale {
        *spec = DegradationSpec { kind: DegradationKind::BicubicSr, scale, ..spec.clone() };
    }
    if let Some(pattern) = cli.pattern {
        *spec = DegradationSpec { kind: DegradationKind::Mosaic, pattern, ..spec.clone() };
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(iters) = cli.iters {
        cfg.train.max_iters = iters;
    }
    if cli.input.is_some() {
        cfg.paths.input = cli.input.clone();
    }
    if cli.out.is_some() {
        cfg.paths.out = cli.out.clone();
    }
    if cli.checkpoint.is_some() {
        cfg.paths.checkpoint = cli.checkpoint.clone();
    }
    cfg.degradation.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn existing(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let Some(path) = path else { bail!("no {what} given") };
    ensure!(path.exists(), "{what} {} does not exist", path.display());
    Ok(path.clone())
}

fn out_dir(cfg: &CliConfig) -> Result<PathBuf> {
    let Some(dir) = cfg.paths.out.clone() else { bail!("no output directory given (--out)") };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// File name for `img` written under `dir`, switching between PGM and PPM
/// when the channel count changed.
fn output_path(dir: &Path, source: &Path, img: &Tensor4<f32>) -> PathBuf {
    let name = source.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out.png"));
    let ext = name.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let name = match ext.as_str() {
        "pgm" | "ppm" => name.with_extension(if img.c() == 1 { "pgm" } else { "ppm" }),
        _ => name,
    };
    dir.join(name)
}

fn degrade(cfg: &CliConfig) -> Result<()> {
    let input = existing(cfg.paths.input.as_ref(), "input directory (--input)")?;
    let out = out_dir(cfg)?;
    let spec = &cfg.degradation;
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, path) in list_images(&input)?.iter().enumerate() {
        let img = match load_image(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let lq = spec.clone().with_seed(spec.seed.wrapping_add(i as u64)).apply(&img)?;
        let db = psnr(&lq, &spec.target(&img)?)?;
        save_image(&lq, &output_path(&out, path, &lq))?;
        println!("{}\t{db:.4}", path.file_name().unwrap_or_default().to_string_lossy());
        total += db;
        count += 1;
    }
    ensure!(count > 0, "no readable images in {}", input.display());
    println!("mean\t{:.4}", total / count as f64);
    Ok(())
}

fn train(cli: &Cli, cfg: &CliConfig) -> Result<()> {
    let corpus_dir = existing(cfg.paths.input.as_ref().or(cfg.paths.corpus.as_ref()), "training corpus (--input)")?;
    let out = out_dir(cfg)?;
    // Only an explicit --checkpoint resumes; paths.checkpoint names the model to evaluate.
    let (network, init) = match &cli.checkpoint {
        Some(path) => {
            let ck = read_checkpoint(&existing(Some(path), "checkpoint")?)?;
            (ck.config, Some(ck.store))
        }
        None => (cfg.network.clone(), None),
    };
    let spec = &cfg.degradation;
    ensure!(
        spec.channels(network.in_channels) == network.in_channels,
        "{} degradation turns {}-channel images into {}-channel ones; set network.in_channels accordingly",
        spec.kind,
        network.in_channels,
        spec.channels(network.in_channels)
    );
    let corpus = Corpus::from_dir(&corpus_dir, network.in_channels)?;
    ensure!(!corpus.is_empty(), "no usable images in {}", corpus_dir.display());
    let opts = TrainOptions { out_dir: Some(out.clone()), threads: threads_from_env(), init, progress_every: 100 };
    let outcome = train_on_corpus(&corpus, spec, &network, &cfg.train, &opts)?;
    match outcome.final_loss() {
        Some(loss) => println!("trained {} iterations, final loss {loss:.6e}", outcome.log.len()),
        None => println!("trained 0 iterations"),
    }
    println!("checkpoint {}", final_checkpoint_path(&out).display());
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn infer(cli: &Cli, cfg: &CliConfig) -> Result<()> {
    let ck_path = existing(cfg.paths.checkpoint.as_ref(), "checkpoint (--checkpoint)")?;
    let input = existing(cfg.paths.input.as_ref(), "input (--input)")?;
    let out = out_dir(cfg)?;
    let ck = read_checkpoint(&ck_path)?;
    let net = ck.network()?;
    let paths = if input.is_dir() {
        list_images(&input)?
    } else {
        ensure!(is_image_path(&input), "{} is not a PNG, PGM or PPM file", input.display());
        vec![input.clone()]
    };
    let mut written = 0;
    for path in &paths {
        let img = match load_image(path).and_then(|img| to_channels(img, ck.config.in_channels)) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let restored = restore(&net, &ck, &img, cli.self_ensemble)?;
        let dest = output_path(&out, path, &restored);
        save_image(&restored, &dest)?;
        println!("{}", dest.display());
        written += 1;
    }
    ensure!(written > 0, "no images restored from {}", input.display());
    Ok(())
}

fn restore(net: &Rnan, ck: &Checkpoint, img: &Tensor4<f32>, self_ensemble: bool) -> Result<Tensor4<f32>> {
    Ok(if self_ensemble { self_ensemble_infer(net, &ck.store, img)? } else { net.infer(&ck.store, img)? })
}

fn eval(cli: &Cli, cfg: &CliConfig) -> Result<()> {
    let ck_path = existing(cfg.paths.checkpoint.as_ref(), "checkpoint (--checkpoint)")?;
    let dir = existing(cfg.paths.input.as_ref().or(cfg.paths.eval.as_ref()), "evaluation directory (--input)")?;
    ensure!(dir.is_dir(), "{} is not a directory", dir.display());
    let ck = read_checkpoint(&ck_path)?;
    let opts = EvalOptions {
        self_ensemble: cli.self_ensemble,
        y_channel: cli.y_channel || cfg.degradation.default_y_channel(),
    };
    let report = evaluate(&dir, &cfg.degradation, &ck.store, &ck.config, opts)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    if let Some(out) = &cfg.paths.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval.csv"), &csv)?;
    }
    if report.skipped > 0 {
        log::warn!("{} image(s) skipped", report.skipped);
    }
    Ok(())
}

fn gradcheck(cli: &Cli) -> Result<()> {
    let seeds: Vec<u64> = match cli.seed {
        Some(s) => vec![s],
        None => (0..GRADCHECK_SEEDS).collect(),
    };
    let (mut total, mut failed) = (0, 0);
    for seed in seeds {
        for r in run_seed(seed)? {
            let ok = r.passes(TOLERANCE);
            println!(
                "seed {seed} {:<36} max_rel_error {:.3e} {}",
                r.op_name,
                r.max_rel_error,
                if ok { "ok" } else { "FAIL" }
            );
            total += 1;
            failed += usize::from(!ok);
        }
    }
    println!("{} of {total} checks passed (tolerance {TOLERANCE:e})", total - failed);
    ensure!(failed == 0, "{failed} gradient check(s) failed");
    Ok(())
}

fn params(cfg: &CliConfig) -> Result<()> {
    let net = Rnan::new(&cfg.network)?;
    for (name, count) in net.breakdown() {
        println!("{name}\t{count}");
    }
    println!("total\t{}", count_parameters(&cfg.network)?);
    Ok(())
}
