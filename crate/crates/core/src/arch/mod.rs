//! Network architecture: residual blocks, the non-local block, trunk and mask
//! branches, attention blocks and the full network.

mod block;
mod checkpoint;
mod config;
mod layers;
mod mask;
mod network;
mod nonlocal;
mod params;

pub use block::{fuse, fuse_backward, AttentionBlock, AttentionCache, BranchOutputs};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    FORMAT_VERSION, MAGIC,
};
pub use config::{BlockConfig, FusionMode, NetworkConfig};
pub use layers::{Conv, Deconv, ResBlock, ResBlockCache, ResChain, ResChainCache};
pub use mask::{MaskBranch, MaskCache, MIN_DOWNSCALED};
pub use network::{count_parameters, Rnan, RnanCache};
pub use nonlocal::{NonLocalBlock, NonLocalCache};
pub use params::{Grads, Init, Param, ParamId, ParamLayout, ParamSpec, ParamStore};
