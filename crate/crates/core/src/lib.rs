//! Shared-encoder / task-specific-decoder toolkit for text-dependent speaker
//! verification.
//!
//! An autoregressive predictive coding encoder is pre-trained on unlabeled
//! filterbank features, frozen, and used as a feature extractor for a
//! phrase-ID decoder (CTC phoneme head plus pooled phrase classifier) and a
//! speaker-ID decoder (pooled bottleneck embedding). Speaker embeddings are
//! scored with LDA + PLDA, fused with phrase scores and evaluated with EER
//! and normalized minDCF.

pub mod apc;
pub mod backend;
pub mod archive;
pub mod ctc;
pub mod decoders;
pub mod error;
pub mod frontend;
#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;
pub mod io_util;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, ParamStore, Tensor, Var};

/// Seeded generator used for every stochastic step (init, dropout, shuffling,
/// synthesis).
pub type ModelRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ModelRng {
    use rand::SeedableRng;
    ModelRng::seed_from_u64(seed)
}
