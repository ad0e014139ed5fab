//! Test-time zoom orchestration for point-predicting GUI grounding models.
//!
//! The crate wraps any [`grounder::Grounder`] with a coarse-to-fine search:
//! a first-round agreement test between a global prediction and a tile grid,
//! followed by drift-free narrowing where every crop is placed in original
//! image pixels and bounded below by a minimum crop size. Around that core
//! sit an evaluation harness with resumable result logs, the zoom-behavior
//! benchmark builder, and a seeded synthetic oracle for testing.

pub mod bench;
pub mod geometry;
pub mod grounder;
pub mod harness;
pub mod pipeline;
mod scalar;
pub mod screenshot;
pub mod synth;

pub use scalar::Scalar;

pub use geometry::{BoundaryMode, PixelBox, PixelPoint};

/// Normalized point in `f64`, the precision used throughout the pipeline.
pub type NormPoint = geometry::NormPoint<f64>;
/// Normalized viewport in `f64`.
pub type Viewport = geometry::Viewport<f64>;
pub type NormPoint32 = geometry::NormPoint<f32>;
pub type Viewport32 = geometry::Viewport<f32>;

pub use grounder::{Grounder, GroundingOutcome, GroundingQuery};
pub use pipeline::{zoom_click, ZoomConfig, ZoomResult};
pub use screenshot::Screenshot;
