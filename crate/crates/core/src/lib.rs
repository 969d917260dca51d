//! Noise-aware continual training for entity extraction from visually rich
//! documents.
//!
//! The crate trains a compact layout-aware token tagger in three phases:
//! initialization (masked-token pre-training on unlabeled documents),
//! sequential fine-tuning on each weakly labeled corpus with confidence
//! weighting, thresholding and an opposite-model regularizer, and a final
//! fine-tune on rule-based synthetic documents.
//!
//! Numeric code is generic over [`Scalar`]; training uses `f32`
//! ([`Params`]) and numerical verification uses `f64` ([`Params64`]).

pub mod augmentation;
pub mod corpus_io;
pub mod doc_model;
pub mod error;
pub mod evaluation;
pub mod noise_aware;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tagger;
pub mod weak_supervision;

pub use error::{NatError, Result};
pub use scalar::Scalar;

/// Parameters of the training-precision tagger.
pub type Params = tagger::TaggerParams<f32>;
/// Double-precision parameters, used for gradient and loss verification.
pub type Params64 = tagger::TaggerParams<f64>;
/// Per-token logits in training precision.
pub type Logits = tagger::Matrix<f32>;
