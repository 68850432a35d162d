//! Training-data preparation: dataset manifests, per-scanner folds and
//! annotation-centred patch sampling.

mod folds;
mod manifest;
mod patch;

use thiserror::Error;

pub use folds::{make_folds, FoldSplit};
pub use manifest::{DatasetManifest, ImageEntry, ManifestReport};
pub use patch::{
    annotations_in_window, feasible_origins, plan_patch, sample_batch, sample_patch, AnnotationDraw, FileImageSource,
    ImageSource, MemoryImageSource, PatchPlan, PatchProvenance, PatchSpec,
};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("manifest schema error: {0}")]
    Schema(String),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scanner {scanner} has {count} images, fewer than {n_folds} folds")]
    TooFewImages {
        scanner: String,
        count: usize,
        n_folds: usize,
    },
    #[error("need at least 3 folds, got {0}")]
    InvalidFoldCount(usize),
    #[error("split is empty")]
    EmptySplit,
    #[error("no image in the split has annotations")]
    NoAnnotatedImages,
    #[error("image {0} is not in the manifest")]
    UnknownImage(u64),
    #[error("patch size {0} is invalid")]
    InvalidPatchSize(u32),
    #[error("patch {size} does not fit image {image_id} ({width}x{height})")]
    PatchLargerThanImage {
        image_id: u64,
        size: u32,
        width: u32,
        height: u32,
    },
    #[error("annotation {annotation_id} cannot fit inside a {size}px patch")]
    UnsatisfiableCrop { annotation_id: u64, size: u32 },
    #[error("image {image_id} is {actual:?} on disk but {expected:?} in the manifest")]
    DimensionMismatch {
        image_id: u64,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}
