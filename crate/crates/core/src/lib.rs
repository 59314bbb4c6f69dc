//! Zero-shot 3D instance segmentation from multi-view 2D instance masks.
//!
//! The pipeline oversegments a point cloud into geometry-based superpoints,
//! scores superpoint pair affinities by how consistently the pair lands
//! under the same 2D mask across posed RGB-D frames, and merges superpoints
//! into instances with a progressive, multi-level region-growing pass. A
//! deterministic synthetic-scene generator provides exact oracles for every
//! stage, and the evaluation module scores predictions with the standard
//! class-agnostic Average Precision protocol.

pub mod affinity;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod masks2d;
pub mod openvocab;
pub mod oversegment;
pub mod pipeline;
pub mod regiongrow;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
