//! Core of the Mirror dialogue model: a bidirectionally trained
//! encoder/decoder with a shared Gaussian latent variable.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: the reverse-mode differentiation tape and Adam, corpus
//! windowing and batching, the encoders, latent bridge and four decoders,
//! the training objectives and loop, decoding strategies, automatic metrics
//! and the pairwise-evaluation bookkeeping. File formats, the CLI and the
//! HTTP service live in the `mirror` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod decoders;
pub mod diff;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod latent;
mod lstm;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod train;

pub use error::{Error, Result};
