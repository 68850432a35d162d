//! Stand-in detectors: a ground-truth-driven mock for end-to-end runs and a replay
//! detector that serves pre-computed per-tile outputs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::image::Rgb8Image;
use crate::io::DetectionLine;
use crate::rng::RandomStream;
use crate::sampler::DatasetManifest;
use crate::tiler::{Detector, TileContext};
use crate::types::{Annotation, BBox, DetectionRecord, Label, Point};

/// Perturbation settings for [`MockDetector`]. The default echoes ground truth exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    /// Probability that an annotation is missed.
    pub dropout: f64,
    /// Probability that an annotation spawns a nearby false positive.
    pub false_positive_rate: f64,
    /// Standard deviation of center jitter in pixels.
    pub jitter: f64,
    /// Confidence range for emitted detections.
    pub confidence: (f64, f64),
}

impl Default for MockSettings {
    fn default() -> Self {
        MockSettings {
            dropout: 0.0,
            false_positive_rate: 0.0,
            jitter: 0.0,
            confidence: (1.0, 1.0),
        }
    }
}

/// Emits the manifest's annotations that fall inside each tile, perturbed.
///
/// Every random choice is keyed by `(image id, annotation id)`, so an object seen by
/// several overlapping tiles is treated identically in each.
pub struct MockDetector {
    by_image: HashMap<u64, Vec<Annotation>>,
    settings: MockSettings,
    rng: RandomStream,
}

impl MockSettings {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("dropout", self.dropout),
            ("false_positive_rate", self.false_positive_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(format!("jitter {} must be a non-negative number", self.jitter));
        }
        let (lo, hi) = self.confidence;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(format!("confidence range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"));
        }
        Ok(())
    }
}

const KEY_FALSE_POSITIVE: u64 = 1;
const FP_MIN_OFFSET: f64 = 60.0;
const FP_MAX_OFFSET: f64 = 150.0;

impl MockDetector {
    pub fn new(manifest: &DatasetManifest, settings: MockSettings, rng: RandomStream) -> Self {
        let mut by_image: HashMap<u64, Vec<Annotation>> = HashMap::new();
        for a in manifest.annotations() {
            by_image.entry(a.image_id).or_default().push(a.clone());
        }
        MockDetector {
            by_image,
            settings,
            rng,
        }
    }

    fn confidence(&self, s: &mut RandomStream) -> f64 {
        let (lo, hi) = self.settings.confidence;
        s.uniform(lo, hi).clamp(0.0, 1.0)
    }

    /// Slide-frame detections for one annotation (possibly none, possibly a false positive too).
    fn emit(&self, a: &Annotation) -> Vec<DetectionRecord> {
        let mut out = Vec::new();
        let base = self.rng.derive(a.image_id).derive(a.id);
        let mut s = base.clone();
        let missed = s.bernoulli(self.settings.dropout);
        let (dx, dy) = (self.settings.jitter * s.normal(), self.settings.jitter * s.normal());
        let conf = self.confidence(&mut s);
        if !missed {
            let center = Point::new(a.center.x + dx, a.center.y + dy);
            out.push(DetectionRecord {
                image_id: a.image_id,
                center,
                bbox: a.bbox.translate(dx, dy),
                label: a.label,
                confidence: conf,
            });
        }
        let mut f = base.derive(KEY_FALSE_POSITIVE);
        if f.bernoulli(self.settings.false_positive_rate) {
            let angle = f.uniform(0.0, std::f64::consts::TAU);
            let dist = f.uniform(FP_MIN_OFFSET, FP_MAX_OFFSET);
            let center = Point::new(a.center.x + dist * angle.cos(), a.center.y + dist * angle.sin());
            out.push(DetectionRecord {
                image_id: a.image_id,
                center,
                bbox: BBox::centered(center.x, center.y, a.bbox.width(), a.bbox.height()),
                label: Label::MitoticFigure,
                confidence: self.confidence(&mut f),
            });
        }
        out
    }
}

impl Detector for MockDetector {
    fn detect(&self, tile: &Rgb8Image, ctx: &TileContext) -> Result<Vec<DetectionRecord>, String> {
        let (ox, oy) = (ctx.origin.0 as f64, ctx.origin.1 as f64);
        let (tw, th) = (tile.width() as f64, tile.height() as f64);
        let inside = |p: Point| p.x >= ox && p.y >= oy && p.x < ox + tw && p.y < oy + th;
        let Some(anns) = self.by_image.get(&ctx.image_id) else {
            return Ok(Vec::new());
        };
        Ok(anns
            .iter()
            .flat_map(|a| self.emit(a))
            .filter(|d| inside(d.center))
            .map(|d| d.translate(-ox, -oy))
            .collect())
    }
}

/// Serves detections recorded per tile (`tile_x`/`tile_y` fields, tile coordinates).
#[derive(Default)]
pub struct ReplayDetector {
    by_tile: HashMap<(u64, u32, u32), Vec<DetectionRecord>>,
}

impl ReplayDetector {
    pub fn from_lines(lines: impl IntoIterator<Item = DetectionLine>) -> Result<Self, String> {
        let mut by_tile: HashMap<(u64, u32, u32), Vec<DetectionRecord>> = HashMap::new();
        for (i, line) in lines.into_iter().enumerate() {
            let (Some(tx), Some(ty)) = (line.tile_x, line.tile_y) else {
                return Err(format!("record {i} lacks tile_x/tile_y"));
            };
            let image_id = line.image_id;
            let rec = line.into_record().map_err(|e| format!("record {i}: {e}"))?;
            by_tile.entry((image_id, tx, ty)).or_default().push(rec);
        }
        Ok(ReplayDetector { by_tile })
    }
}

impl Detector for ReplayDetector {
    fn detect(&self, _tile: &Rgb8Image, ctx: &TileContext) -> Result<Vec<DetectionRecord>, String> {
        Ok(self
            .by_tile
            .get(&(ctx.image_id, ctx.origin.0, ctx.origin.1))
            .cloned()
            .unwrap_or_default())
    }
}
