//! Cross-lingual transfer on a small from-scratch transformer encoder.
//!
//! The crate bundles a reverse-mode tensor engine, a synthetic bilingual
//! corpus, lexicon-driven embedding transfer, per-batch token graphs,
//! graph-enhanced attention, hidden-space mixing, and the training and
//! ablation harness around them.

pub mod batching;
pub mod certify;
pub mod corpus;
pub mod experiment;
pub mod error;
pub mod exec;
pub mod graph;
pub mod lexicon;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
