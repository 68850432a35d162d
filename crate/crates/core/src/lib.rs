//! Data-centric building blocks for mitosis detection under scanner domain shift:
//! single-draw augmentation, annotation-centred patch sampling, per-scanner folds,
//! anchor-scale search, tiled inference and distance-based F1 evaluation.

pub mod anchors;
pub mod augment;
pub mod detect;
pub mod eval;
pub mod image;
pub mod io;
pub mod rng;
pub mod sampler;
pub mod tiler;
pub mod types;

pub use crate::image::{ImageError, Rgb8Image};
pub use crate::rng::RandomStream;
pub use crate::types::{Annotation, BBox, DetectionRecord, Label, Point};
