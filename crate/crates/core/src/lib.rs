//! Residual non-local attention networks (RNAN) for image restoration.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense 4-D tensors with hand-derived forward/backward kernels
//!   and a finite-difference gradient checker.
//! * [`arch`]: residual blocks, the non-local block, trunk/mask branches,
//!   attention blocks and the full network, with parameter bookkeeping and
//!   checkpoints.
//! * [`degrade`]: seeded generators of noisy, mosaiced, JPEG-compressed and
//!   downsampled inputs.
//! * [`metrics`]: PSNR, SSIM and the luma conversion used for scoring.
//! * [`train`]: L2 training with Adam, patch sampling, evaluation and
//!   self-ensemble inference.

pub mod arch;
pub mod degrade;
pub mod error;
pub mod gradsuite;
pub mod imageio;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor4};
