//! Consolidated associative memory for causal attention models.
//!
//! A [`memory::MemoryBank`] holds a fixed number of slots, each a running mean
//! of the keys and values routed to it. Banks are read with the native keys of
//! a context window, the retrieved slots are prepended to the window's keys and
//! values ([`attention`]), and the window is then written back, consolidating
//! familiar tokens and replacing the oldest slots with novel ones.
//!
//! The [`lm`] module wires this into a small character-level transformer for
//! windowed language-model evaluation, and [`sim`] drives banks with synthetic
//! mixture streams whose ground truth is known.

pub mod attention;
pub mod cli;
pub mod error;
pub mod lm;
pub mod memory;
pub mod sim;
pub mod vector;

pub use error::{Error, Result};
pub use vector::{DenseVector, SimilarityKind};
