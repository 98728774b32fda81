//! Tensor-based unsourced random access over a block-fading MIMO channel:
//! CRC-aided polar coding, structured Grassmannian modulation, rank-adaptive
//! Bayesian tensor decomposition, and the iterative feedback receiver.

pub mod coding;
pub mod config;
pub mod error;
pub mod gmbtd;
pub mod grassmann;
pub mod receiver;
pub mod sim;
pub mod tensor;
pub mod tx;
