//! Personalized grammatical error correction.
//!
//! A general-purpose attentional LSTM corrector is pre-trained on a broad
//! pool of sentences and then adapted to learner subsets selected by
//! proficiency level, first language, or both. Only the source embeddings
//! and the encoder are updated during adaptation. Systems are compared with
//! MaxMatch (M2) F0.5.
//!
//! The numeric core ([`nn`], [`train`]) is generic over the scalar type;
//! use the aliases below for the common instantiations.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod harness;
pub mod nn;
pub mod scalar;
pub mod subword;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Params32 = nn::ModelParams<f32>;
pub type Params64 = nn::ModelParams<f64>;
/// Gradients share the parameter layout.
pub type Grads32 = nn::ModelParams<f32>;
pub type Grads64 = nn::ModelParams<f64>;
pub type OptimState32 = train::OptimState<f32>;
pub type OptimState64 = train::OptimState<f64>;
