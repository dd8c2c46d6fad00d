//! Prototype (nearest-class-mean) classification for few-shot learning on
//! precomputed embeddings.
//!
//! The crate covers the whole loop from feature files to risk analysis:
//!
//! * [`feature_store`] loads labeled embeddings and computes class and
//!   ensemble moments,
//! * [`transforms`] implements the embedding transforms (L2, centering,
//!   variance normalization, regularized LDA, EST and EST followed by L2),
//! * [`classifier`] builds prototypes and scores queries,
//! * [`evaluator`] runs seeded N-way K-shot episodes,
//! * [`bounds`] evaluates the Chebyshev-type risk bounds and their terms,
//! * [`synthetic`] generates ensembles with known moments and estimates the
//!   true risk by Monte Carlo or exact enumeration.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod classifier;
pub mod error;
pub mod evaluator;
pub mod feature_store;
pub mod linalg;
pub mod rng;
pub mod synthetic;
pub mod transforms;

pub use error::{Error, Result};
pub use feature_store::{ClassStats, Divisor, EnsembleStats, FeatureSet, FileFormat};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
