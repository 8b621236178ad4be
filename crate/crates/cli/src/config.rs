//! Config file loading.
//!
//! The file is TOML with four optional sections:
//!
//! ```toml
//! [network]
//! preset = "tiny"          # "full" (default) or "tiny"; other keys override it
//! in_channels = 1
//! [network.block]
//! features = 16
//!
//! [train]
//! preset = "desk"          # "full" (default) or "desk"
//! max_iters = 2000
//!
//! [degradation]
//! kind = "awgn"            # awgn | mosaic | jpeg | bicubic_sr
//! sigma = 25.0
//!
//! [paths]
//! corpus = "data/train"
//! eval = "data/test"
//! checkpoint = "runs/a/model.rnan"
//! out = "runs/a"
//! ```
//!
//! Unknown keys are rejected. Relative paths are taken from the working
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rnan::arch::NetworkConfig;
use rnan::degrade::DegradationSpec;
use rnan::train::TrainConfig;
use serde::Deserialize;
use toml::Table;

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub degradation: DegradationSpec,
    pub paths: Paths,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::full(3),
            train: TrainConfig::full(),
            degradation: DegradationSpec::default(),
            paths: Paths::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut root: Table = text.parse().context("invalid TOML")?;
        let mut cfg = Self::default();
        if let Some(t) = take_table(&mut root, "network")? {
            cfg.network = network_from(t)?;
        }
        if let Some(mut t) = take_table(&mut root, "train")? {
            let base = match take_str(&mut t, "preset")?.as_deref() {
                None | Some("full") => TrainConfig::full(),
                Some("desk") => TrainConfig::desk(),
                Some(other) => bail!("unknown train preset {other:?} (expected \"full\" or \"desk\")"),
            };
            cfg.train = overlay(&base, t).context("[train]")?;
        }
        if let Some(t) = take_table(&mut root, "degradation")? {
            cfg.degradation = toml::Value::Table(t).try_into().context("[degradation]")?;
        }
        if let Some(t) = take_table(&mut root, "paths")? {
            cfg.paths = toml::Value::Table(t).try_into().context("[paths]")?;
        }
        if let Some(key) = root.keys().next() {
            bail!("unknown config section or key {key:?}");
        }
        cfg.network.validate()?;
        cfg.train.validate()?;
        cfg.degradation.validate()?;
        Ok(cfg)
    }
}

fn take_table(root: &mut Table, key: &str) -> Result<Option<Table>> {
    match root.remove(key) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => bail!("{key} must be a table"),
    }
}

fn take_str(t: &mut Table, key: &str) -> Result<Option<String>> {
    match t.remove(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(s)),
        Some(_) => bail!("{key} must be a string"),
    }
}

fn network_from(mut t: Table) -> Result<NetworkConfig> {
    let base = match take_str(&mut t, "preset")?.as_deref() {
        None | Some("full") => NetworkConfig::full(3),
        Some("tiny") => NetworkConfig::tiny(3),
        Some(other) => bail!("unknown network preset {other:?} (expected \"full\" or \"tiny\")"),
    };
    let explicit_positions = t.contains_key("nonlocal_positions");
    let mut cfg: NetworkConfig = overlay(&base, t).context("[network]")?;
    if !explicit_positions {
        let global_residual = cfg.global_residual;
        cfg = NetworkConfig::with_blocks(cfg.num_local_blocks, cfg.num_nonlocal_blocks, cfg.block, cfg.in_channels);
        cfg.global_residual = global_residual;
    }
    Ok(cfg)
}

/// `base` with every key of `patch` replaced, recursing into sub-tables.
fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, patch: Table) -> Result<T> {
    let mut merged = Table::try_from(base)?;
    merge(&mut merged, patch);
    Ok(toml::Value::Table(merged).try_into()?)
}

fn merge(dst: &mut Table, src: Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rnan::degrade::DegradationKind;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(CliConfig::parse("").unwrap(), CliConfig::default());
    }

    #[test]
    fn presets_and_overrides() {
        let cfg = CliConfig::parse(
            r#"
            [network]
            preset = "tiny"
            in_channels = 1
            num_local_blocks = 3
            [network.block]
            features = 8
            [train]
            preset = "desk"
            max_iters = 10
            [degradation]
            kind = "jpeg"
            quality = 20
            [paths]
            out = "runs/x"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.network.in_channels, 1);
        assert_eq!(cfg.network.block.features, 8);
        assert_eq!(cfg.network.block.nlb_channels, 8);
        assert_eq!(cfg.network.nonlocal_positions, vec![0]);
        assert_eq!(cfg.network.num_blocks(), 4);
        assert_eq!(cfg.train.max_iters, 10);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.degradation.kind, DegradationKind::Jpeg);
        assert_eq!(cfg.degradation.quality, 20);
        assert_eq!(cfg.paths.out, Some(PathBuf::from("runs/x")));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CliConfig::parse("[network]\nfeatures = 3").is_err());
        assert!(CliConfig::parse("[train]\npreset = \"huge\"").is_err());
        assert!(CliConfig::parse("[degradation]\nquality = 0\nkind = \"jpeg\"").is_err());
        assert!(CliConfig::parse("[extra]\na = 1").is_err());
        assert!(CliConfig::parse("seed = 1").is_err());
        assert!(CliConfig::parse("[train]\nbatch_size = 0").is_err());
        assert!(CliConfig::parse("[network]\nnonlocal_positions = [0, 0]").is_err());
        assert!(CliConfig::parse("not toml [").is_err());
    }
}
