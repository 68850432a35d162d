//! Annotation and detection records in slide (or patch) pixel coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box ({x_min}, {y_min}, {x_max}, {y_max}) is not well ordered")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("center ({0}, {1}) lies outside its box")]
    CenterOutsideBox(f64, f64),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    MitoticFigure,
    Imposter,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::MitoticFigure => "mitotic_figure",
            Label::Imposter => "imposter",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box `(x_min, y_min, x_max, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if x_min < x_max && y_min < y_max {
            Ok(b)
        } else {
            Err(GeometryError::DegenerateBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    pub fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x_min: cx - w / 2.0,
            y_min: cy - h / 2.0,
            x_max: cx + w / 2.0,
            y_max: cy + h / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point {
        Point::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// True when `other` lies fully inside `self` (shared edges allowed).
    pub fn encloses(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min && other.y_min >= self.y_min && other.x_max <= self.x_max && other.y_max <= self.y_max
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).map_or(0.0, |b| b.area());
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Reflection `x' = width - x`.
    pub fn flip_horizontal(&self, width: f64) -> BBox {
        BBox {
            x_min: width - self.x_max,
            y_min: self.y_min,
            x_max: width - self.x_min,
            y_max: self.y_max,
        }
    }

    pub fn flip_vertical(&self, height: f64) -> BBox {
        BBox {
            x_min: self.x_min,
            y_min: height - self.y_max,
            x_max: self.x_max,
            y_max: height - self.y_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub center: Point,
    pub bbox: BBox,
    pub label: Label,
}

impl Annotation {
    pub fn new(id: u64, image_id: u64, center: Point, bbox: BBox, label: Label) -> Result<Self, GeometryError> {
        let bbox = BBox::new(bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max)?;
        if !bbox.contains(center) {
            return Err(GeometryError::CenterOutsideBox(center.x, center.y));
        }
        Ok(Annotation {
            id,
            image_id,
            center,
            bbox,
            label,
        })
    }

    /// Annotation whose center is the box center.
    pub fn from_box(id: u64, image_id: u64, bbox: BBox, label: Label) -> Result<Self, GeometryError> {
        Annotation::new(id, image_id, bbox.center(), bbox, label)
    }

    pub fn flip_horizontal(&self, width: f64) -> Annotation {
        Annotation {
            center: Point::new(width - self.center.x, self.center.y),
            bbox: self.bbox.flip_horizontal(width),
            ..self.clone()
        }
    }

    pub fn flip_vertical(&self, height: f64) -> Annotation {
        Annotation {
            center: Point::new(self.center.x, height - self.center.y),
            bbox: self.bbox.flip_vertical(height),
            ..self.clone()
        }
    }
}

/// One detector output in slide coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub center: Point,
    pub bbox: BBox,
    pub label: Label,
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn new(image_id: u64, center: Point, bbox: BBox, label: Label, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::Confidence(confidence));
        }
        let bbox = BBox::new(bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max)?;
        Ok(DetectionRecord {
            image_id,
            center,
            bbox,
            label,
            confidence,
        })
    }

    pub fn translate(&self, dx: f64, dy: f64) -> DetectionRecord {
        DetectionRecord {
            center: Point::new(self.center.x + dx, self.center.y + dy),
            bbox: self.bbox.translate(dx, dy),
            ..self.clone()
        }
    }

    /// Total order used everywhere detections are ranked: confidence descending,
    /// then `y`, then `x` ascending.
    pub fn rank_cmp(&self, other: &DetectionRecord) -> std::cmp::Ordering {
        other
            .confidence
            .total_cmp(&self.confidence)
            .then(self.center.y.total_cmp(&other.center.y))
            .then(self.center.x.total_cmp(&other.center.x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizontal_flip_reflects_box() {
        let b = BBox::new(10.0, 20.0, 60.0, 70.0).unwrap();
        assert_eq!(b.flip_horizontal(448.0), BBox::new(388.0, 20.0, 438.0, 70.0).unwrap());
        assert_eq!(b.flip_horizontal(448.0).flip_horizontal(448.0), b);
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        let far = BBox::new(100.0, 100.0, 101.0, 101.0).unwrap();
        assert_eq!(a.iou(&far), 0.0);
    }

    #[test]
    fn invalid_records() {
        assert!(BBox::new(5.0, 0.0, 5.0, 1.0).is_err());
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Annotation::new(1, 1, Point::new(3.0, 0.5), b, Label::Imposter).is_err());
        assert!(DetectionRecord::new(1, b.center(), b, Label::Imposter, 1.2).is_err());
    }

    #[test]
    fn label_names_are_stable() {
        assert_eq!(
            serde_json::to_string(&Label::MitoticFigure).unwrap(),
            "\"mitotic_figure\""
        );
        assert_eq!(serde_json::from_str::<Label>("\"imposter\"").unwrap(), Label::Imposter);
    }
}
