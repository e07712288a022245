//! Learned redaction of sensitive text corpora.
//!
//! A small perceptron ranks every word of a sentence; the lowest-ranked K%
//! are replaced with `[MASK]`. The ranker is trained so that the redacted
//! sensitive corpus becomes hard to tell apart from a safe corpus, measured
//! by a differentiable kernel KL-divergence between mean-pooled sentence
//! embeddings. After redaction, a clustering-based Rényi-divergence estimate
//! is converted to an (ε, δ) privacy estimate.

pub mod baseline;
pub mod checkpoint;
pub mod corpus;
pub mod divloss;
pub mod embed;
pub mod error;
pub mod mask;
pub mod privacy;
pub mod ranker;
pub mod redact;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
