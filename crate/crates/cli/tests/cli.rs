use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rnan::arch::{count_parameters, save_checkpoint, NetworkConfig, Rnan};
use rnan::imageio::{load_image, save_image};
use rnan::train::Corpus;
use tempfile::TempDir;

fn rnan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnan"))
        .args(args)
        .env("RNAN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn succeed(args: &[&str]) -> String {
    let out = rnan(args);
    assert!(out.status.success(), "rnan {args:?} failed: {}", stderr(&out));
    stdout(&out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `n` synthetic grayscale images into `dir/name` and returns that directory.
fn image_dir(root: &Path, name: &str, n: usize, size: usize, seed: u64) -> PathBuf {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    for (i, img) in Corpus::synthetic(n, size, 1, seed).images.iter().enumerate() {
        save_image(&img.hq, &dir.join(format!("img{i}.pgm"))).unwrap();
    }
    dir
}

fn zero_checkpoint(path: &Path) {
    let cfg = NetworkConfig::tiny(1);
    let mut store = Rnan::new(&cfg).unwrap().init_params::<f32>(0);
    for p in store.params_mut() {
        p.value.data_mut().fill(0.0);
    }
    save_checkpoint(path, &cfg, &store, false).unwrap();
}

fn mean_line(text: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with("mean")).expect("mean line");
    line.split('\t').nth(1).unwrap().parse().unwrap()
}

#[test]
fn params_matches_library_count() {
    let text = succeed(&["params"]);
    let mut sum = 0usize;
    let mut total = None;
    for line in text.lines() {
        let (name, n) = line.split_once('\t').unwrap();
        let n: usize = n.parse().unwrap();
        if name == "total" {
            total = Some(n);
        } else {
            sum += n;
        }
    }
    let expected = count_parameters(&NetworkConfig::full(3)).unwrap();
    assert_eq!(total, Some(expected));
    assert_eq!(sum, expected);
}

#[test]
fn params_reads_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("net.toml");
    fs::write(&cfg, "[network]\npreset = \"tiny\"\nin_channels = 1\n").unwrap();
    let text = succeed(&["params", "--config", s(&cfg)]);
    let expected = count_parameters(&NetworkConfig::tiny(1)).unwrap();
    assert!(text.ends_with(&format!("total\t{expected}\n")), "{text}");
}

#[test]
fn gradcheck_passes() {
    let text = succeed(&["gradcheck", "--seed", "0"]);
    assert!(text.lines().last().unwrap().contains("checks passed"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn degrade_sigma_zero_is_lossless() {
    let tmp = TempDir::new().unwrap();
    let input = image_dir(tmp.path(), "in", 2, 40, 5);
    let out = tmp.path().join("out");
    let text = succeed(&["degrade", "--sigma", "0", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(mean_line(&text), f64::INFINITY);
    for name in ["img0.pgm", "img1.pgm"] {
        assert_eq!(fs::read(input.join(name)).unwrap(), fs::read(out.join(name)).unwrap());
    }
}

#[test]
fn degrade_is_seeded() {
    let tmp = TempDir::new().unwrap();
    let input = image_dir(tmp.path(), "in", 2, 40, 6);
    let run = |out: &str, seed: &str| {
        let dir = tmp.path().join(out);
        succeed(&["degrade", "--sigma", "25", "--seed", seed, "--input", s(&input), "--out", s(&dir)]);
        fs::read(dir.join("img1.pgm")).unwrap()
    };
    let a = run("a", "9");
    assert_eq!(a, run("b", "9"));
    assert_ne!(a, run("c", "10"));
}

#[test]
fn degrade_sigma_50_psnr() {
    let tmp = TempDir::new().unwrap();
    let input = image_dir(tmp.path(), "in", 3, 64, 7);
    let out = tmp.path().join("out");
    let text = succeed(&["degrade", "--sigma", "50", "--input", s(&input), "--out", s(&out)]);
    // 20·log10(255/50) for unclipped noise.
    let db = mean_line(&text);
    assert!((db - 14.151).abs() < 0.2, "{db}");
}

#[test]
fn degrade_jpeg_and_sr_keep_size() {
    let tmp = TempDir::new().unwrap();
    let input = image_dir(tmp.path(), "in", 1, 32, 8);
    let jpeg = tmp.path().join("jpeg");
    succeed(&["degrade", "--quality", "20", "--input", s(&input), "--out", s(&jpeg)]);
    assert_eq!(load_image(&jpeg.join("img0.pgm")).unwrap().dims(), [1, 1, 32, 32]);
    let sr = tmp.path().join("sr");
    succeed(&["degrade", "--scale", "2", "--input", s(&input), "--out", s(&sr)]);
    assert_eq!(load_image(&sr.join("img0.pgm")).unwrap().dims(), [1, 1, 32, 32]);
}

#[test]
fn infer_with_zero_network_returns_input() {
    let tmp = TempDir::new().unwrap();
    let input = image_dir(tmp.path(), "in", 2, 24, 9);
    let ck = tmp.path().join("zero.rnan");
    zero_checkpoint(&ck);
    for extra in [None, Some("--self-ensemble")] {
        let out = tmp.path().join(format!("out{}", extra.is_some()));
        let mut args = vec!["infer", "--checkpoint", s(&ck), "--input", s(&input), "--out", s(&out)];
        args.extend(extra);
        let text = succeed(&args);
        assert_eq!(text.lines().count(), 2);
        for name in ["img0.pgm", "img1.pgm"] {
            assert_eq!(fs::read(input.join(name)).unwrap(), fs::read(out.join(name)).unwrap());
        }
    }
    let single = tmp.path().join("single");
    succeed(&["infer", "--checkpoint", s(&ck), "--input", s(&input.join("img1.pgm")), "--out", s(&single)]);
    assert!(single.join("img1.pgm").exists());
}

#[test]
fn eval_writes_csv() {
    let tmp = TempDir::new().unwrap();
    let input = image_dir(tmp.path(), "in", 2, 32, 10);
    let ck = tmp.path().join("zero.rnan");
    zero_checkpoint(&ck);
    let out = tmp.path().join("out");
    let text = succeed(&["eval", "--sigma", "50", "--checkpoint", s(&ck), "--input", s(&input), "--out", s(&out)]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image,psnr_db,ssim");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("mean,"));
    let db: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
    assert!((db - 14.151).abs() < 0.3, "{db}");
    assert_eq!(fs::read_to_string(out.join("eval.csv")).unwrap(), text);
}

#[test]
fn train_then_eval_from_config() {
    let tmp = TempDir::new().unwrap();
    let corpus = image_dir(tmp.path(), "train", 3, 40, 11);
    let eval = image_dir(tmp.path(), "eval", 1, 32, 12);
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "[network]\npreset = \"tiny\"\nin_channels = 1\n\n\
             [train]\npreset = \"desk\"\nbatch_size = 2\npatch_size = 16\nmax_iters = 4\ncheckpoint_every = 2\n\n\
             [degradation]\nkind = \"awgn\"\nsigma = 15.0\n\n\
             [paths]\ncorpus = \"{}\"\neval = \"{}\"\nout = \"{}\"\ncheckpoint = \"{}\"\n",
            s(&corpus),
            s(&eval),
            s(&run),
            s(&run.join("model.rnan"))
        ),
    )
    .unwrap();
    let text = succeed(&["train", "--config", s(&cfg)]);
    assert!(text.starts_with("trained 4 iterations"), "{text}");
    assert!(run.join("model.rnan").exists());
    assert!(run.join("loss.csv").exists());

    let first = succeed(&["eval", "--config", s(&cfg)]);
    assert!(first.lines().nth(1).unwrap().starts_with("img0.pgm,"));
    assert_eq!(first, succeed(&["eval", "--config", s(&cfg)]));

    // Resuming runs --iters more steps from the stored weights.
    let more = tmp.path().join("more");
    let ck = run.join("model.rnan");
    let text = succeed(&["train", "--config", s(&cfg), "--checkpoint", s(&ck), "--iters", "2", "--out", s(&more)]);
    assert!(text.starts_with("trained 2 iterations"), "{text}");
    assert!(more.join("model.rnan").exists());
}

#[test]
fn conflicting_degradations_are_rejected() {
    let out = rnan(&["degrade", "--sigma", "10", "--quality", "30"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("rnan: "));
}

#[test]
fn errors_are_one_line() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope");
    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, "[network.block]\nfeatures = 0\n").unwrap();
    let not_ck = tmp.path().join("x.rnan");
    fs::write(&not_ck, b"garbage").unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["degrade", "--input", s(&missing), "--out", s(tmp.path())],
        vec!["degrade", "--input", s(&empty), "--out", s(tmp.path())],
        vec!["degrade", "--input", s(&empty)],
        vec!["infer", "--checkpoint", s(&not_ck), "--input", s(&empty), "--out", s(tmp.path())],
        vec!["eval", "--input", s(&empty)],
        vec!["train", "--out", s(tmp.path())],
        vec!["params", "--config", s(&bad_cfg)],
        vec!["params", "--config", s(&missing)],
        vec!["degrade", "--sigma=-3", "--input", s(&empty), "--out", s(tmp.path())],
    ];
    for args in cases {
        let out = rnan(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("rnan: "), "{err}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}
