//! Plane-sweep multi-view stereo with view-preserving late cost aggregation.
//!
//! The crate builds per-source pairwise matching volumes, keeps them apart
//! along a view axis instead of collapsing them up front, and regresses depth
//! through a three-stage coarse-to-fine cascade. Early aggregation baselines
//! (variance and weighted sum), flexible test-time view counts, depth-map
//! filtering, point-cloud fusion and a synthetic ray-cast scene generator with
//! exact ground truth are included so every stage can be measured.
//!
//! Start with [`pipeline::run_cascade`] and the runnable programs under
//! `examples/`.

pub mod aggregation;
pub mod cli;
pub mod cost;
pub mod error;
pub mod filter;
pub mod flex;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
