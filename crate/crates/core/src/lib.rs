//! Learned hierarchical agglomeration of oversegmented n-dimensional images.
//!
//! Superpixels are grouped into a region adjacency graph whose edges are
//! merged greedily by a merge-priority policy. The policy can be a simple
//! boundary mean or a random forest trained against a gold standard with
//! guided agglomerative learning, which collects examples at every scale of
//! the hierarchy rather than only at the superpixel level.

pub mod classify;
pub mod eval;
pub mod error;
pub mod features;
pub mod fmt;
pub mod learn;
pub mod rag;
pub mod rng;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
