//! Hybrid-attention architecture toolkit: a linear-attention block zoo, the
//! JetBlock dynamic-convolution block, softmax attention with KV caches,
//! hybrid model assembly and distillation, synthetic task generators, the
//! PostNAS search engine, and an analytic KV-cache/throughput model.

pub mod error;
pub mod linear_blocks;

pub use error::{CoreError, Result};
