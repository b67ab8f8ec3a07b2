//! Kernel machinery for nonsymmetric Ornstein–Uhlenbeck operators: the
//! matrix families of the model, the Mehler kernel and its time derivative,
//! multiplier kernels of Laplace transform type, the local/global splitting,
//! zero counting in time, and Monte Carlo weak-type experiments.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod frame;
pub mod geometry;
pub mod linalg;
pub mod localization;
pub mod mehler;
pub mod model;
pub mod multiplier;
pub mod oracle;
pub mod quadrature;
pub mod report;
pub mod symbol;
pub mod verify;
pub mod zeros;

pub use error::{OuError, Result};
pub use model::{build_model, ModelConfig, OuModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`; streams let parallel
/// workers draw independent sequences regardless of scheduling.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
