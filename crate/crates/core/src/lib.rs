//! Privacy-preserving heatmaps of time spent per cell tower.
//!
//! A client encrypts an indicator vector of subscribers; the server multiplies
//! it into its subscriber-by-tower matrix under encryption, adds a proving
//! mask that randomizes malformed queries and rounded Laplace noise, and
//! returns a small mod-switched result.

pub mod bench;
pub mod dp;
mod error;
pub mod ingest;
pub mod linalg;
pub mod masking;
pub mod matrix;
pub mod par;
pub mod protocol;

pub use error::{CoreError, Result};
pub use matrix::CdrMatrix;
pub use par::ThreadBudget;

/// Expands a 64-bit seed into a master seed for the request's streams.
pub fn master_seed(seed: u64) -> [u8; 32] {
    masking::derive_seed(&[0u8; 32], &format!("master/{seed}"))
}
