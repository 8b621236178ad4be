use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// How trunk and mask outputs are combined inside an attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `trunk(u) · mask(u) + u`: the attention-gated trunk is added to the
    /// block input, so low-level features pass through untouched.
    ResidualAttention,
    /// `trunk(u) · (mask(u) + 1)`: the residual-attention form used for
    /// classification networks. Kept for ablations.
    MaskPlusOne,
    /// `trunk(u) + u`: no mask branch at all.
    TrunkOnly,
}

impl FusionMode {
    pub fn has_mask(self) -> bool {
        !matches!(self, FusionMode::TrunkOnly)
    }
}

/// Anatomy shared by every attention block of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    /// Residual blocks at each end of the attention block.
    pub q: usize,
    /// Residual blocks in the trunk branch.
    pub t: usize,
    /// Mask-branch granularity: `m` RBs, stride conv, `2m` RBs, deconv, `m` RBs.
    pub m: usize,
    pub features: usize,
    /// Embedding width inside the non-local block.
    pub nlb_channels: usize,
    pub downscale_stride: usize,
    pub fusion: FusionMode,
    /// Whether this particular block carries a non-local block. Set per block
    /// by [`NetworkConfig::block_config`]; never serialized.
    #[serde(skip)]
    pub non_local: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            q: 2,
            t: 2,
            m: 1,
            features: 64,
            nlb_channels: 32,
            downscale_stride: 2,
            fusion: FusionMode::ResidualAttention,
            non_local: false,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.t == 0 || self.m == 0 {
            return config_err(format!(
                "q, t and m must be at least 1 (got {}, {}, {})",
                self.q, self.t, self.m
            ));
        }
        if self.features == 0 || self.nlb_channels == 0 {
            return config_err("features and nlb_channels must be at least 1");
        }
        if self.downscale_stride < 2 {
            return config_err(format!(
                "downscale_stride must be at least 2, got {}",
                self.downscale_stride
            ));
        }
        Ok(())
    }
}

/// Whole-network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_local_blocks: usize,
    pub num_nonlocal_blocks: usize,
    /// Indices (into the full block sequence) of the blocks that carry a
    /// non-local block.
    pub nonlocal_positions: Vec<usize>,
    pub in_channels: usize,
    pub global_residual: bool,
    pub block: BlockConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::with_blocks(8, 2, BlockConfig::default(), 3)
    }
}

impl NetworkConfig {
    /// Builds a config with non-local blocks spread evenly over the block
    /// sequence, always including the first block and, when there are at
    /// least two, the last one.
    pub fn with_blocks(
        num_local_blocks: usize,
        num_nonlocal_blocks: usize,
        block: BlockConfig,
        in_channels: usize,
    ) -> Self {
        let total = num_local_blocks + num_nonlocal_blocks;
        Self {
            num_local_blocks,
            num_nonlocal_blocks,
            nonlocal_positions: default_positions(total, num_nonlocal_blocks),
            in_channels,
            global_residual: true,
            block,
        }
    }

    /// Ten blocks, two of them non-local, 64 features.
    pub fn full(in_channels: usize) -> Self {
        Self::with_blocks(8, 2, BlockConfig::default(), in_channels)
    }

    /// Desk-scale network: one local and one non-local block, 16 features.
    pub fn tiny(in_channels: usize) -> Self {
        let block = BlockConfig { features: 16, nlb_channels: 8, ..BlockConfig::default() };
        Self::with_blocks(1, 1, block, in_channels)
    }

    pub fn num_blocks(&self) -> usize {
        self.num_local_blocks + self.num_nonlocal_blocks
    }

    pub fn is_nonlocal(&self, index: usize) -> bool {
        self.nonlocal_positions.contains(&index)
    }

    pub fn block_config(&self, index: usize) -> BlockConfig {
        BlockConfig { non_local: self.is_nonlocal(index), ..self.block.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if self.in_channels == 0 {
            return config_err("in_channels must be at least 1");
        }
        if self.nonlocal_positions.len() != self.num_nonlocal_blocks {
            return config_err(format!(
                "{} non-local positions given for {} non-local blocks",
                self.nonlocal_positions.len(),
                self.num_nonlocal_blocks
            ));
        }
        let total = self.num_blocks();
        for (i, &p) in self.nonlocal_positions.iter().enumerate() {
            if p >= total {
                return config_err(format!("non-local position {p} out of range for {total} blocks"));
            }
            if self.nonlocal_positions[..i].contains(&p) {
                return config_err(format!("duplicate non-local position {p}"));
            }
        }
        Ok(())
    }
}

fn default_positions(total: usize, count: usize) -> Vec<usize> {
    match count {
        0 => Vec::new(),
        1 => vec![0],
        _ => (0..count)
            .map(|k| (k * (total - 1) + (count - 1) / 2) / (count - 1))
            .collect(),
    }
}
