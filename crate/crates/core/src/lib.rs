//! Diffusion Unit (DU) for 3-D point cloud segmentation.
//!
//! The DU operator evolves point features by a learned diffusion step,
//!
//! ```text
//! u_s <- u_s + varphi( mean over neighbors of phi(u_n - u_s) )
//! ```
//!
//! where `phi` is a shared MLP acting on edge features and `varphi` is
//! ReLU after batch normalization. Depending on the sign structure the
//! network learns for `phi`, the step sharpens feature edges or smooths
//! them out, and that behavior is checkable analytically on a smoothed
//! step-edge profile.
//!
//! The crate provides:
//!
//! * [`geom`]: neighbor search, farthest point sampling, grid subsampling,
//!   interpolation stencils;
//! * [`diffcore`]: a small reverse-mode differentiation engine, optimizers,
//!   loss, and checkpointing;
//! * [`du`]: the diffusion-unit layer and its ablation variants;
//! * [`net`]: a compact encoder/decoder segmentation network built around
//!   DU decoder stages;
//! * [`analysis`]: the edge enhancement/suppression diagnostics and a 1-D
//!   reference diffusion simulator;
//! * [`data`]: synthetic labeled point-cloud recipes, augmentation, and
//!   CSV/PLY I/O;
//! * [`train`]: a deterministic training loop and evaluation metrics.

pub mod analysis;
pub mod data;
pub mod diffcore;
pub mod du;
pub mod geom;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod testkit;
pub mod train;

mod error;

pub use diffcore::{Graph, Mode, ParamId, ParamStore, Tensor, Var};
pub use error::{CoreError, Result};
pub use geom::{NeighborIndex, PointCloud};
