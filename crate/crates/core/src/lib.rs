//! HM4: memory-bounded visual place recognition.
//!
//! The engine recognizes places by recursive Bayesian filtering over an
//! image-sequence database that grows without bound. Images are compressed
//! to categorical polytope-VLAD codes; a coarse model (feature-space
//! cluster centroids plus a support-place submap) summarizes the whole
//! database in active memory, while the full code database and topological
//! map live in passive storage and are touched only for the handful of
//! promising places each step.
//!
//! Module map:
//! - [`descriptors`]: local-feature ingestion, vocabulary training,
//!   synthetic worlds.
//! - [`polyvlad`]: VLAD aggregation, cross-polytope encoding, K-modes
//!   clustering of codes.
//! - [`invindex`]: inverted index over centroid codes.
//! - [`graph`]: the sparse row-stochastic topological map and its submap.
//! - [`hmm`]: the baseline full-database filter and the two-tiered step.
//! - [`store`]: passive store, active memory and transfer accounting.

mod bytes;

pub mod descriptors;
pub mod error;
pub mod graph;
pub mod hmm;
pub mod invindex;
pub mod polyvlad;
pub mod store;

pub use error::{Error, Result};
pub use polyvlad::{jaccard_distance, CodeGeometry, PolyCode};
