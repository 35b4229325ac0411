//! Phonotactic and acoustic vector space models for spoken dialect
//! identification, combined through canonical correlation analysis.
//!
//! The pipeline runs phone n-gram counts through a truncated SVD (`X_P`),
//! frame-level features through a GMM-UBM and total-variability model
//! (`X_A`), fuses the two with CCA (`Z_C`), optionally applies LDA and WCCN,
//! and classifies with an elastic-net softmax model.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod acoustic;
pub mod classifier;
pub mod config;
pub mod container;
pub mod corpus;
pub mod discriminant;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod numerics;
pub mod phonotactic;
pub mod pipeline;
pub mod systems;

pub use error::{Error, ErrorKind, Result};
pub use numerics::{Matrix, Vector};
