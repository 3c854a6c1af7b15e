//! unitscope-core: train small convolutional classifiers and quantify the
//! importance of their individual units by ablation.
//!
//! The crate covers the full measurement pipeline:
//!
//! - a minimal f32 tensor/layer engine with channel masks ([`forward`],
//!   [`backward`]),
//! - bit-exact checkpoint and dataset serialization ([`io`], [`dataset`]),
//! - a synthetic shapes-and-colors dataset with exact concept masks
//!   ([`dataset`]),
//! - SGD training of baseline / batchnorm / channel-dropout variants
//!   ([`trainer`]),
//! - single-unit, greedy, random-baseline and rotated-direction ablation
//!   sweeps ([`ablation`]),
//! - per-unit attributes: L1 norm, class selectivity, class correlation,
//!   concept IoU, top-activated images ([`attributes`]),
//! - attribute/drop correlation and attribute-based prediction of each
//!   unit's most-damaged class ([`insight`]).
//!
//! Determinism is a design constraint throughout: float reductions use a
//! fixed pairwise order or a single GEMM call, accuracy aggregation is
//! integer counting, and all randomness flows from explicit seeds, so
//! every result is reproducible across runs and worker counts.

pub mod ablation;
pub mod artifact;
pub mod attributes;
pub mod backward;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod forward;
pub mod insight;
pub mod io;
pub mod net;
pub mod tensor;
pub mod toynet;
pub mod trainer;

pub use error::{Error, Result};
pub use net::{ChannelMask, LayerParams, LayerSpec, Network, NetworkSpec};
pub use tensor::Tensor;
