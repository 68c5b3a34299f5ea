//! Passage re-ranking with a dynamic memory network (DMN) that reasons over
//! sentence-averaged contextual token representations produced by an
//! external encoder.
//!
//! The crate is organised along the pipeline:
//!
//! - [`data`]: text collections, qrels, candidate pools, the `TOKR` token
//!   representation format, the `DMNC` sentence cache and TREC run files.
//! - [`autodiff`]: a small reverse-mode differentiation graph over dense
//!   vectors and matrices.
//! - [`model`]: GRUs, attention-gated episodic memory, the answer head and
//!   the CLS-only baseline head, plus the `DMNW` checkpoint format.
//! - [`training`]: pairwise max-margin training with AdamW and linear warmup.
//! - [`eval`]: re-ranking and MRR / MAP.
//! - [`analysis`]: diffusion-of-information statistics and gate inspection.
//! - [`synthetic`]: generators for synthetic token-representation datasets.

pub mod analysis;
pub mod autodiff;
pub mod data;
mod error;
pub mod eval;
pub mod model;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
