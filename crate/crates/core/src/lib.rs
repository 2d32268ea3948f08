//! Unsupervised ranking of lexical-substitution candidates.
//!
//! A candidate is scored by substituting it for the target word, encoding the
//! original and the substituted sentence, and summing per-token cosine
//! similarities of layer-concatenated hidden states. Context tokens are weighted
//! by how strongly they influence the target, measured either by aggregated
//! attention or by integrated gradients. Rankings are evaluated with GAP.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the 64-bit instantiation used by the command-line tool and the tests.

pub mod attribution;
pub mod data;
pub mod double_double;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod scorer;
pub mod tokenizer;

pub use double_double::DoubleDouble;
pub use error::{Error, Excluded, Result};
pub use scalar::Scalar;

/// 64-bit reference encoder.
pub type Encoder = encoder::ReferenceEncoder<f64>;
/// 32-bit reference encoder.
pub type Encoder32 = encoder::ReferenceEncoder<f32>;
/// Double-double reference encoder, for high-precision numerical checks.
pub type EncoderExt = encoder::ReferenceEncoder<DoubleDouble>;
pub type EncoderOutput = encoder::EncoderOutput<f64>;
pub type TokenWeights = attribution::TokenWeights<f64>;
pub type RawScores = attribution::RawScores<f64>;
pub type RankingResult = scorer::RankingResult<f64>;
pub type GoldSet = metrics::GoldSet<f64>;
