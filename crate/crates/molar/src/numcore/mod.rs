//! Minimal dense-tensor engine with reverse-mode gradients.
//!
//! Everything the recommendation models need and nothing more: a flat f64
//! tensor, an expression-arena autodiff graph, a transformer block, a GRU
//! cell, Adam, a warmup+cosine schedule, and a finite-difference harness
//! that keeps the analytic gradients honest.

pub mod adam;
pub mod attention;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod param;
pub mod schedule;
pub mod tensor;

pub use adam::AdamState;
pub use attention::{attention_block, causal_mask, AttentionBlockParams, AttentionBlockVars};
pub use gradcheck::{finite_diff_gradcheck, GradcheckEntry, GradcheckReport};
pub use graph::{Gradients, Graph, Var};
pub use gru::{gru_cell, GruCellParams, GruCellVars};
pub use param::{normal_init, xavier_init, Parameter};
pub use schedule::LrSchedule;
pub use tensor::Tensor;

/// FNV-1a 64-bit hash; used for tokenization and content fingerprints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Extend an FNV-1a hash with the raw bits of a f64 slice.
pub fn fnv1a_f64(mut hash: u64, values: &[f64]) -> u64 {
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    hash
}
