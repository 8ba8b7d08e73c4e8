//! Command-line surface for the diffusion-unit segmentation toolkit:
//! dataset generation, training, evaluation, the ablation sweep, step-edge
//! analysis, and smoothness export. The binary in `main.rs` is a thin
//! argument layer over [`commands`].

pub mod commands;
pub mod config;
pub mod sweep;

pub use commands::{
    cmd_ablate, cmd_analyze_edge, cmd_eval, cmd_generate, cmd_smoothness, cmd_train,
};
pub use config::RunConfig;
