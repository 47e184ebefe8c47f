//! Tabular deep learning with proximity-aware contextual tokenization.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape and a finite-difference
//!   gradient checker.
//! - [`tokenizer`]: feature tokenizer for numerical, categorical and
//!   round-offset contextual features, plus the CLS token.
//! - [`encoder`]: multi-head self-attention encoder with a CLS readout head.
//! - [`models`]: MLP, ResNet, TabTransformer, FT-Transformer and PACT behind
//!   one interface, with checkpointing.
//! - [`data`]: schemas, CSV ingestion, preprocessing, splitting and the
//!   synthetic user-round-spends generator.
//! - [`train`]: losses, Adam, early-stopped training, multi-seed runs,
//!   random search, scaling curves and comparison reports.

pub mod data;
pub mod encoder;
pub mod error;
pub mod hash;
pub mod models;
pub mod params;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
