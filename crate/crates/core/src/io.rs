//! JSON-lines detection streams and atomic artifact writes.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BBox, DetectionRecord, GeometryError, Label, Point};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// One detection per line: `{image_id, cx, cy, x_min, y_min, x_max, y_max, label, confidence}`.
/// `tile_x`/`tile_y` are present only for per-tile detector output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionLine {
    pub image_id: u64,
    pub cx: f64,
    pub cy: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub label: Label,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_x: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_y: Option<u32>,
}

impl DetectionLine {
    pub fn into_record(self) -> Result<DetectionRecord, GeometryError> {
        DetectionRecord::new(
            self.image_id,
            Point::new(self.cx, self.cy),
            BBox {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
            },
            self.label,
            self.confidence,
        )
    }
}

impl From<&DetectionRecord> for DetectionLine {
    fn from(d: &DetectionRecord) -> Self {
        DetectionLine {
            image_id: d.image_id,
            cx: d.center.x,
            cy: d.center.y,
            x_min: d.bbox.x_min,
            y_min: d.bbox.y_min,
            x_max: d.bbox.x_max,
            y_max: d.bbox.y_max,
            label: d.label,
            confidence: d.confidence,
            tile_x: None,
            tile_y: None,
        }
    }
}

/// Parses JSON lines; blank lines are skipped.
pub fn read_detection_lines(path: &Path) -> Result<Vec<DetectionLine>, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionLine = serde_json::from_str(&line).map_err(|e| IoError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>, IoError> {
    read_detection_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.into_record().map_err(|e| IoError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn detections_to_jsonl(dets: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&serde_json::to_string(&DetectionLine::from(d)).expect("detection serializes"));
        out.push('\n');
    }
    out
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(err)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let d = DetectionRecord::new(
            7,
            Point::new(12.5, 30.0),
            BBox::centered(12.5, 30.0, 20.0, 20.0),
            Label::Imposter,
            0.25,
        )
        .unwrap();
        let text = detections_to_jsonl(&[d.clone(), d.clone()]);
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains("tile_x"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_atomic(&path, text.as_bytes()).unwrap();
        assert_eq!(read_detections(&path).unwrap(), vec![d.clone(), d]);
    }

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "\n{\"image_id\": 1}\n").unwrap();
        let err = read_detections(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn confidence_outside_unit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            r#"{"image_id":1,"cx":1,"cy":1,"x_min":0,"y_min":0,"x_max":2,"y_max":2,"label":"mitotic_figure","confidence":1.5}"#,
        )
        .unwrap();
        assert!(read_detections(&path).is_err());
    }
}
