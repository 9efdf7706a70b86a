//! Weakly supervised, graph-based perspective and stance detection.
//!
//! The pipeline converts a corpus of authors, tweets, entity mentions, and
//! hashtags into a five-relation heterogeneous graph, encodes it with a
//! two-layer relational graph convolutional network carrying five multitask
//! prediction heads and two prior-alignment losses, and grows its training
//! set through a self-learning loop gated by confidence and consistency
//! checks. A deterministic template-based corpus generator provides labeled
//! synthetic data with planted ground truth for end-to-end evaluation.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod graph;
pub mod model;
pub mod numkit;
pub mod selftrain;
pub mod synthgen;

pub use error::{Error, Result};
