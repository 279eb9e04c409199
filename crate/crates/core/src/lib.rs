//! Out-of-category document detection using only target-category names.
//!
//! The pipeline embeds words, documents and categories on a shared unit
//! sphere ([`embed`]), turns document/category relevance into soft
//! pseudo-labels ([`pseudo`]), trains a convolutional text classifier on the
//! confident part of the corpus ([`classifier`]), and ranks every document by
//! the classifier's confidence. [`detect`] holds the metrics and baseline
//! detectors, [`synth`] generates labeled corpora for benchmarking, and
//! [`pipeline`] wires the stages together with persisted artifacts.

pub mod classifier;
pub mod corpus;
pub mod detect;
pub mod embed;
pub mod error;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod pseudo;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
