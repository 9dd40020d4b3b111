//! Differentiable numeric primitives: dense arrays, a reverse-mode tape,
//! standard layers (convolution, normalization, soft-max, bilinear sampling,
//! MLP) and a finite-difference gradient-check harness. Every learnable
//! module in this crate is built from these pieces.

pub mod gradcheck;
pub mod ndarray;
pub mod ops;
pub mod param;
pub mod pure;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use ndarray::{rf, NdArray, Real};
pub use ops::smooth_l1_tau;
pub use param::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
