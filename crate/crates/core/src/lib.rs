//! Federated sparse-training simulator.
//!
//! The pipeline prunes a server-pretrained network into a pool of coarse
//! candidates, lets clients pick the least biased one by refreshing its
//! batch-normalization statistics on local data, and then adjusts the mask
//! during federated training with grow/prune steps driven by bounded top-K
//! gradient buffers. Storage, memory, and FLOPs are accounted exactly.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bn_select;
pub mod cost;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod mask;
pub mod masking;
pub mod net;
pub mod prog_prune;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::{LayerMask, Mask, SparseLayout};
pub use net::{BnState, BnStats, Layer, Linear, LossValue, MlpSpec, Mode, Network};
pub use tensor::Tensor;
