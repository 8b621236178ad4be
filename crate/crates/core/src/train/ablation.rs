use std::io::Write;

use super::config::TrainConfig;
use super::corpus::Corpus;
use super::eval::{evaluate_corpus, EvalOptions};
use super::trainer::{train_on_corpus, TrainOptions};
use crate::arch::{count_parameters, BlockConfig, FusionMode, NetworkConfig, Rnan};
use crate::degrade::DegradationSpec;
use crate::error::{config_err, Result};

/// One configuration of the component ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationCase {
    pub index: usize,
    pub mask: bool,
    pub non_local: bool,
    /// Blocks with a local mask branch (or plain trunk blocks without masks).
    pub local_blocks: usize,
    /// Blocks with a non-local block.
    pub nonlocal_blocks: usize,
}

impl AblationCase {
    /// Network for this case. Without a mask branch every block fuses as
    /// `trunk + input`; non-local blocks then sit in front of the trunk.
    pub fn network(&self, block: &BlockConfig, in_channels: usize) -> NetworkConfig {
        let fusion = if self.mask { FusionMode::ResidualAttention } else { FusionMode::TrunkOnly };
        let block = BlockConfig { fusion, ..block.clone() };
        NetworkConfig::with_blocks(self.local_blocks, self.nonlocal_blocks, block, in_channels)
    }
}

/// The eight cases: (mask, non-local, local blocks, non-local blocks).
pub fn ablation_grid() -> Vec<AblationCase> {
    [
        (false, false, 7, 0),
        (true, false, 7, 0),
        (false, true, 5, 2),
        (true, true, 5, 2),
        (true, true, 1, 1),
        (true, true, 2, 2),
        (true, true, 5, 1),
        (true, true, 8, 2),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (mask, non_local, local_blocks, nonlocal_blocks))| AblationCase {
        index: i + 1,
        mask,
        non_local,
        local_blocks,
        nonlocal_blocks,
    })
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub case: AblationCase,
    pub params: usize,
    pub final_loss: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Checks that a built network has the block structure the case asks for.
pub fn check_structure(case: &AblationCase, net: &Rnan) -> Result<()> {
    let blocks = &net.blocks;
    if blocks.len() != case.local_blocks + case.nonlocal_blocks {
        return config_err(format!("case {}: {} blocks built", case.index, blocks.len()));
    }
    let non_local = blocks.iter().filter(|b| b.is_non_local()).count();
    if non_local != case.nonlocal_blocks {
        return config_err(format!("case {}: {non_local} non-local blocks built", case.index));
    }
    if blocks.iter().any(|b| b.mask.is_some() != case.mask) {
        return config_err(format!("case {}: mask branches do not match", case.index));
    }
    Ok(())
}

/// Builds, trains and evaluates every case with identical data and seeds.
pub fn run_ablation(
    cases: &[AblationCase],
    block: &BlockConfig,
    in_channels: usize,
    train_set: &Corpus,
    eval_set: &Corpus,
    spec: &DegradationSpec,
    train_cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let net_cfg = case.network(block, in_channels);
        check_structure(case, &Rnan::new(&net_cfg)?)?;
        let outcome = train_on_corpus(train_set, spec, &net_cfg, train_cfg, opts)?;
        let report = evaluate_corpus(eval_set, spec, &outcome.store, &net_cfg, EvalOptions::default())?;
        let row = AblationRow {
            case: *case,
            params: count_parameters(&net_cfg)?,
            final_loss: outcome.final_loss().unwrap_or(f64::NAN),
            psnr_db: report.mean.psnr_db,
            ssim: report.mean.ssim,
        };
        log::info!("ablation case {}: {:.3} dB", case.index, row.psnr_db);
        rows.push(row);
    }
    Ok(rows)
}

/// One column per case, rows `mask`, `non_local`, `local_blocks`,
/// `nonlocal_blocks`, `params`, `final_loss`, `psnr_db`, `ssim`.
pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut w: W) -> Result<()> {
    let line = |label: &str, f: &dyn Fn(&AblationRow) -> String| {
        let cells: Vec<String> = rows.iter().map(f).collect();
        format!("{label},{}", cells.join(","))
    };
    let mark = |b: bool| if b { "yes".to_string() } else { "no".to_string() };
    writeln!(w, "{}", line("case", &|r| r.case.index.to_string()))?;
    writeln!(w, "{}", line("mask", &|r| mark(r.case.mask)))?;
    writeln!(w, "{}", line("non_local", &|r| mark(r.case.non_local)))?;
    writeln!(w, "{}", line("local_blocks", &|r| r.case.local_blocks.to_string()))?;
    writeln!(w, "{}", line("nonlocal_blocks", &|r| r.case.nonlocal_blocks.to_string()))?;
    writeln!(w, "{}", line("params", &|r| r.params.to_string()))?;
    writeln!(w, "{}", line("final_loss", &|r| format!("{:.6e}", r.final_loss)))?;
    writeln!(w, "{}", line("psnr_db", &|r| format!("{:.4}", r.psnr_db)))?;
    writeln!(w, "{}", line("ssim", &|r| format!("{:.4}", r.ssim)))?;
    Ok(())
}
