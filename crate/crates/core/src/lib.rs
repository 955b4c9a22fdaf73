//! Point-cloud semantic segmentation with a hierarchical point-edge interaction
//! network.
//!
//! The toolkit has two cooperating branches: an encoder-decoder point branch
//! that produces per-point class scores, and an edge branch that builds a
//! directed graph hierarchically from the coarsest point layer to the full
//! resolution, encodes per-edge features along the way, and predicts for every
//! edge whether its two endpoints share a semantic class. Edge features feed
//! back into the point modules, and the final edge predictions re-weight the
//! point scores.
//!
//! Everything is deterministic for a fixed seed and runs at desk scale: the
//! tensor engine is a minimal reverse-mode tape over dense `f64` arrays, with
//! `f32` available as a speed mode.

pub mod ablate;
pub mod config;
pub mod edge;
pub mod error;
pub mod eval;
pub mod geom;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod point;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
