//! Anchor-to-joint 3D interacting-hand pose estimation.
//!
//! Dense 3D anchor queries are refined by a deformable-attention
//! encoder/decoder and fused into joint coordinates by learned per-anchor
//! weights. Everything runs on a small hand-rolled autodiff tape so the
//! whole pipeline is testable on a desk: synthetic two-hand data, training,
//! metrics and the component/anchor ablation harnesses.

pub mod a2j_head;
pub mod anchors;
pub mod attention;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod data_synth;
pub mod diffmath;
pub mod encoding;
pub mod error;
pub mod init;
pub mod losses;
pub mod model;
pub mod train_eval;
pub mod verify;

pub use cli::run;
pub use error::{Error, Result};
