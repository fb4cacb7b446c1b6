//! Self-supervised skeleton action representation learning.
//!
//! Pretrains GCN-Transformer encoders over three skeleton modalities (joint,
//! motion, bone) with momentum-contrast InfoNCE, then couples them through
//! bidirectional knowledge distillation of similarity distributions: across
//! modalities, and within each modality between an instance-level branch and
//! a neighbor-aggregating cluster-level branch. Everything runs on a small
//! f64 autodiff tape so gradients can be finite-difference checked.

pub mod bank;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod config;
pub mod losses;
pub mod trainer;
pub mod rng;
pub mod tensor;
pub mod verify;
pub(crate) mod wire;

pub use tensor::{Graph, Tensor, TensorError, Var};
pub use wire::FormatError;
