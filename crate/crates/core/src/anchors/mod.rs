//! Multi-level anchor grids and the search for anchor scales that best cover
//! ground-truth boxes.

mod de;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomStream;
use crate::types::BBox;

pub use de::{differential_evolution, DeParams, DeResult};

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("no ground-truth boxes")]
    EmptyGroundTruth,
    #[error("bounds for dimension {dim} are invalid: ({lo}, {hi})")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("invalid anchor configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub stride: u32,
    pub base_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub levels: Vec<AnchorLevel>,
    pub ratios: Vec<f64>,
    pub scales: Vec<f64>,
}

/// Scales reported for the MIDOG RetinaNet.
pub const SEARCHED_SCALES: [f64; 3] = [0.781, 1.435, 1.578];

/// RetinaNet's default octave scales `2^0, 2^(1/3), 2^(2/3)`.
pub fn octave_scales() -> [f64; 3] {
    [1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)]
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            levels: [(8, 32.0), (16, 64.0), (32, 128.0), (64, 256.0), (128, 512.0)]
                .into_iter()
                .map(|(stride, base_size)| AnchorLevel { stride, base_size })
                .collect(),
            ratios: vec![1.0],
            scales: SEARCHED_SCALES.to_vec(),
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.levels.is_empty() {
            return Err(AnchorError::InvalidConfig("no pyramid levels".into()));
        }
        if self.levels.iter().any(|l| l.stride == 0 || !(l.base_size > 0.0)) {
            return Err(AnchorError::InvalidConfig(
                "strides and base sizes must be positive".into(),
            ));
        }
        if self.levels.windows(2).any(|w| w[0].stride >= w[1].stride) {
            return Err(AnchorError::InvalidConfig("strides must be strictly increasing".into()));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(AnchorError::InvalidConfig(
                "ratios must be positive and non-empty".into(),
            ));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(AnchorError::InvalidConfig(
                "scales must be positive and non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn with_scales(&self, scales: &[f64]) -> AnchorConfig {
        AnchorConfig {
            scales: scales.to_vec(),
            ..self.clone()
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

fn anchor_dims(base: f64, scale: f64, ratio: f64) -> (f64, f64) {
    let r = ratio.sqrt();
    (base * scale * r, base * scale / r)
}

/// All anchors for an image, level-major, then row-major over cells, then scales, then ratios.
/// Cell `(i, j)` at a level with stride `s` is centred on `((i + 0.5) s, (j + 0.5) s)`.
pub fn generate_anchors(config: &AnchorConfig, image_size: (u32, u32)) -> Vec<BBox> {
    let (w, h) = image_size;
    let mut out = Vec::new();
    for level in &config.levels {
        let s = level.stride;
        let (cols, rows) = (w.div_ceil(s), h.div_ceil(s));
        for j in 0..rows {
            for i in 0..cols {
                let cx = (i as f64 + 0.5) * s as f64;
                let cy = (j as f64 + 0.5) * s as f64;
                for &scale in &config.scales {
                    for &ratio in &config.ratios {
                        let (aw, ah) = anchor_dims(level.base_size, scale, ratio);
                        out.push(BBox::centered(cx, cy, aw, ah));
                    }
                }
            }
        }
    }
    out
}

/// Expected length of [`generate_anchors`] output.
pub fn anchor_count(config: &AnchorConfig, image_size: (u32, u32)) -> usize {
    config
        .levels
        .iter()
        .map(|l| {
            image_size.0.div_ceil(l.stride) as usize
                * image_size.1.div_ceil(l.stride) as usize
                * config.anchors_per_cell()
        })
        .sum()
}

/// What the scale search maximizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FitnessObjective {
    /// Mean over ground-truth boxes of the best IoU with any anchor.
    #[default]
    MeanMaxIou,
    /// Fraction of ground-truth boxes whose best IoU reaches `threshold`.
    RecallAtIou { threshold: f64 },
}

/// Nearest cell centre along one axis for an unbounded grid starting at index 0.
fn nearest_center(c: f64, stride: f64) -> f64 {
    let idx = (c / stride - 0.5).round().max(0.0);
    (idx + 0.5) * stride
}

/// Best IoU between `gt` and any anchor with the given scales on a grid covering it.
///
/// For anchors of one fixed shape the IoU only falls as the centre offset grows on either
/// axis, so only the nearest cell per (level, scale, ratio) needs checking.
pub fn max_iou(gt: &BBox, levels: &[AnchorLevel], scales: &[f64], ratios: &[f64]) -> f64 {
    let c = gt.center();
    let mut best = 0.0f64;
    for level in levels {
        let s = level.stride as f64;
        let (ax, ay) = (nearest_center(c.x, s), nearest_center(c.y, s));
        for &scale in scales {
            for &ratio in ratios {
                let (aw, ah) = anchor_dims(level.base_size, scale, ratio);
                best = best.max(BBox::centered(ax, ay, aw, ah).iou(gt));
            }
        }
    }
    best
}

pub fn anchor_fitness_with(
    scales: &[f64],
    gt_boxes: &[BBox],
    config: &AnchorConfig,
    objective: FitnessObjective,
) -> Result<f64, AnchorError> {
    if gt_boxes.is_empty() {
        return Err(AnchorError::EmptyGroundTruth);
    }
    let n = gt_boxes.len() as f64;
    let ious = gt_boxes
        .iter()
        .map(|b| max_iou(b, &config.levels, scales, &config.ratios));
    Ok(match objective {
        FitnessObjective::MeanMaxIou => ious.sum::<f64>() / n,
        FitnessObjective::RecallAtIou { threshold } => ious.filter(|&v| v >= threshold).count() as f64 / n,
    })
}

/// Mean over ground-truth boxes of the maximum IoU against the anchor set built with `scales`.
pub fn anchor_fitness(scales: &[f64], gt_boxes: &[BBox], config: &AnchorConfig) -> Result<f64, AnchorError> {
    anchor_fitness_with(scales, gt_boxes, config, FitnessObjective::MeanMaxIou)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSearch {
    /// Sorted ascending.
    pub scales: Vec<f64>,
    pub fitness: f64,
    pub generations: usize,
    pub history: Vec<f64>,
}

/// Searches one shared scale set (one scale per entry of `params.bounds`) with
/// differential evolution.
pub fn optimize_scales(
    gt_boxes: &[BBox],
    config: &AnchorConfig,
    params: &DeParams,
    objective: FitnessObjective,
    rng: &RandomStream,
) -> Result<ScaleSearch, AnchorError> {
    if gt_boxes.is_empty() {
        return Err(AnchorError::EmptyGroundTruth);
    }
    config.validate()?;
    let res = differential_evolution(
        |scales| anchor_fitness_with(scales, gt_boxes, config, objective).expect("ground truth checked non-empty"),
        params,
        rng,
    )?;
    let mut scales = res.best;
    scales.sort_by(f64::total_cmp);
    Ok(ScaleSearch {
        scales,
        fitness: res.fitness,
        generations: res.generations,
        history: res.history,
    })
}
