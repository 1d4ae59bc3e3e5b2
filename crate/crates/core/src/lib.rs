//! Hybrid linear/block-sparse attention kernels, the exact and kernelized
//! reference mechanisms they approximate, and numerical evaluation of the
//! associated approximation error bounds.
//!
//! Module map:
//! - [`linalg`]: dense matrices, products, spectral/Frobenius norms, softmax.
//! - [`matio`]: the `ELF1` binary and CSV matrix file formats.
//! - [`attention`]: vanilla and block-masked attention oracles.
//! - [`kernel`]: random-feature and one-hot kernelized approximations.
//! - [`elfatt`]: the hybrid two-head mechanism, blockify/unblockify, and the
//!   depthwise positional convolution.
//! - [`bounds`]: error-bound reports, pair statistics, and the flop model.

pub mod attention;
pub mod bounds;
pub mod elfatt;
mod error;
pub mod kernel;
pub mod linalg;
pub mod matio;

pub use attention::{AttentionMode, AttentionProblem, BlockMask};
pub use bounds::{BoundBranch, BoundReport, BoundStatistics, FlopsEstimate};
pub use elfatt::{DepthwiseKernel, HeadSplitConfig, LepePlacement, QkvProjection};
pub use error::{Error, Result};
pub use kernel::RandomFeatureMap;
pub use linalg::{DenseMatrix, NormKind};
