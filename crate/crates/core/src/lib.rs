//! A desk-scale laboratory for ALBERT-style encoder pretraining.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`graph`]), the
//! BERT/ALBERT encoder family with factorized embeddings and cross-layer
//! parameter sharing ([`model`]), a masked-LM / sentence-pair data pipeline
//! ([`data`]), the LAMB optimizer ([`optim`]), layer-similarity and intrinsic
//! evaluation tooling ([`diagnostics`]) and the training loop ([`train`]).

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
