//! Overlapping-tile inference: tile planning, detector dispatch, re-mapping into the
//! slide frame and cross-tile deduplication.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rayon::prelude::*;

use crate::image::Rgb8Image;
use crate::types::DetectionRecord;

#[derive(Debug, Error)]
pub enum TilerError {
    #[error("tile {tile} with overlap {overlap} is invalid (need 0 <= overlap < tile)")]
    InvalidConfig { tile: u32, overlap: u32 },
    #[error("{width}x{height} image is smaller than the {tile}px tile")]
    ImageSmallerThanTile { width: u32, height: u32, tile: u32 },
    #[error("detector failed on tile at ({}, {}): {message}", origin.0, origin.1)]
    DetectorFailure { origin: (u32, u32), message: String },
    #[error("could not build worker pool: {0}")]
    Workers(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub tile: u32,
    pub overlap: u32,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig { tile: 448, overlap: 64 }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<(), TilerError> {
        if self.tile == 0 || self.overlap >= self.tile {
            return Err(TilerError::InvalidConfig {
                tile: self.tile,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.tile - self.overlap
    }
}

/// How overlapping detections from neighbouring tiles are merged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MergeRule {
    /// Drop a detection whose center is within `radius` of a kept, higher-ranked
    /// detection of the same class.
    CenterDistance { radius: f64 },
    /// Classic NMS: drop when IoU with a kept same-class detection exceeds `threshold`.
    Iou { threshold: f64 },
}

impl Default for MergeRule {
    fn default() -> Self {
        MergeRule::CenterDistance { radius: 30.0 }
    }
}

/// Where a tile sits in the slide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileContext {
    pub image_id: u64,
    pub origin: (u32, u32),
}

/// A detector run on one tile at a time. Implementations must be stateless across
/// tiles: the output may depend only on the tile pixels and its context.
pub trait Detector: Sync {
    /// Detections in tile coordinates.
    fn detect(&self, tile: &Rgb8Image, ctx: &TileContext) -> Result<Vec<DetectionRecord>, String>;
}

impl<F> Detector for F
where
    F: Fn(&Rgb8Image, &TileContext) -> Result<Vec<DetectionRecord>, String> + Sync,
{
    fn detect(&self, tile: &Rgb8Image, ctx: &TileContext) -> Result<Vec<DetectionRecord>, String> {
        self(tile, ctx)
    }
}

fn axis_origins(dim: u32, tile: u32, stride: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut o = 0u32;
    loop {
        if o + tile >= dim {
            let last = dim - tile;
            if out.last() != Some(&last) {
                out.push(last);
            }
            return out;
        }
        out.push(o);
        o += stride;
    }
}

/// Tile origins, row-major. Per axis the origins step by `tile - overlap`, and the final
/// origin is clamped to `dim - tile` so the last tile ends at the image edge.
pub fn plan_tiles(image_size: (u32, u32), config: &TilingConfig) -> Result<Vec<(u32, u32)>, TilerError> {
    config.validate()?;
    let (w, h) = image_size;
    if w < config.tile || h < config.tile {
        return Err(TilerError::ImageSmallerThanTile {
            width: w,
            height: h,
            tile: config.tile,
        });
    }
    let xs = axis_origins(w, config.tile, config.stride());
    let ys = axis_origins(h, config.tile, config.stride());
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

fn full_cmp(a: &DetectionRecord, b: &DetectionRecord) -> std::cmp::Ordering {
    a.rank_cmp(b)
        .then(a.image_id.cmp(&b.image_id))
        .then(a.label.cmp(&b.label))
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
}

/// Greedy suppression over detections ranked by confidence (ties by `y`, then `x`).
/// Only detections with the same image and label suppress each other.
pub fn deduplicate(mut dets: Vec<DetectionRecord>, rule: MergeRule) -> Vec<DetectionRecord> {
    dets.sort_by(full_cmp);
    let mut kept: Vec<DetectionRecord> = Vec::with_capacity(dets.len());
    for d in dets {
        let suppressed = kept.iter().any(|k| {
            k.image_id == d.image_id
                && k.label == d.label
                && match rule {
                    MergeRule::CenterDistance { radius } => k.center.distance(d.center) <= radius,
                    MergeRule::Iou { threshold } => k.bbox.iou(&d.bbox) > threshold,
                }
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Output of a tiled run.
#[derive(Clone, Debug, PartialEq)]
pub struct TiledRun {
    pub detections: Vec<DetectionRecord>,
    pub tiles: usize,
    /// Set when the image was reflect-padded up to the tile size.
    pub padded_to: Option<(u32, u32)>,
}

/// Runs `detector` on every tile using the current rayon pool.
pub fn run_tiled(
    image: &Rgb8Image,
    image_id: u64,
    detector: &dyn Detector,
    config: &TilingConfig,
    merge: MergeRule,
) -> Result<TiledRun, TilerError> {
    config.validate()?;
    let (w, h) = image.dimensions();
    let padded;
    let (source, padded_to) = if w < config.tile || h < config.tile {
        padded = image.pad_reflect(config.tile, config.tile);
        (&padded, Some(padded.dimensions()))
    } else {
        (image, None)
    };
    let origins = plan_tiles(source.dimensions(), config)?;
    let per_tile: Vec<Vec<DetectionRecord>> = origins
        .par_iter()
        .map(|&origin| {
            let tile = source
                .crop(origin, (config.tile, config.tile))
                .expect("planned tiles lie inside the image");
            let ctx = TileContext { image_id, origin };
            detector
                .detect(&tile, &ctx)
                .map_err(|message| TilerError::DetectorFailure { origin, message })
                .map(|dets| {
                    dets.into_iter()
                        .map(|d| DetectionRecord {
                            image_id,
                            ..d.translate(origin.0 as f64, origin.1 as f64)
                        })
                        .collect()
                })
        })
        .collect::<Result<_, _>>()?;
    let (wf, hf) = (w as f64, h as f64);
    let merged: Vec<DetectionRecord> = per_tile
        .into_iter()
        .flatten()
        .filter(|d| d.center.x >= 0.0 && d.center.y >= 0.0 && d.center.x < wf && d.center.y < hf)
        .collect();
    Ok(TiledRun {
        detections: deduplicate(merged, merge),
        tiles: origins.len(),
        padded_to,
    })
}

/// [`run_tiled`] on a dedicated pool with `workers` threads.
pub fn run_tiled_with_workers(
    image: &Rgb8Image,
    image_id: u64,
    detector: &dyn Detector,
    config: &TilingConfig,
    merge: MergeRule,
    workers: usize,
) -> Result<TiledRun, TilerError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| TilerError::Workers(e.to_string()))?;
    pool.install(|| run_tiled(image, image_id, detector, config, merge))
}
