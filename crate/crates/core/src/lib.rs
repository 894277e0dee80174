//! Graph-based classification of imbalanced node sets: note featurization,
//! patient similarity networks, genetic-algorithm meta-graph sampling and a
//! meta-learning regularized message-passing network, with evaluation metrics.

pub mod cli;
pub mod community;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod psn;
pub mod sampler;
pub mod synth;
pub mod text;
pub mod treenorm;

pub use error::{GraceError, Result};

/// Per-component seed: `seed` xor the FNV-1a hash of `component`.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}
