//! Graph self-supervised learning toolkit.
//!
//! The pipeline has four stages: a [`config::RunConfig`] describes the run, an
//! SSL [`methods`] objective pretrains a graph encoder, the [`trainer`] drives
//! optimization with early stopping, and the [`eval`] module scores the frozen
//! embeddings on downstream tasks.

pub mod augment;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod methods;
pub mod pipeline;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
