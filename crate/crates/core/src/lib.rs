//! Recognition of pure and mixed kidney-stone morphologies from endoscopic images.
//!
//! The crate covers the whole experimental pipeline:
//!
//! * [`dataset`]: class taxonomy, observation records, manifest ingestion and
//!   preprocessing to the 256×256 network input.
//! * [`synth`]: a deterministic phantom-stone generator with exact region masks.
//! * [`augment`]: training-time flips and affine warps.
//! * [`nn`] and [`classifier`]: a small from-scratch CNN toolkit, the desk and
//!   residual backbones, training with Adam, and checkpoints.
//! * [`explain`]: Grad-CAM heat maps, overlays and hot-spot localization.
//! * [`evaluation`]: group-aware splits, the metric battery, mixed-stone
//!   scoring, confusion matrices and repeated cross-validation.

pub mod augment;
pub mod classifier;
pub mod dataset;
pub mod evaluation;
pub mod explain;
pub mod nn;
pub mod render;
pub mod seed;
pub mod synth;

pub use dataset::{ClassLabel, Morphology, NormalizedImage, StoneObservation, View};
