use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SamplerError;
use crate::types::{Annotation, BBox, Label};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub scanner: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRecord {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
    category: Label,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    images: Vec<ImageEntry>,
    annotations: Vec<AnnotationRecord>,
}

/// Images with their scanner and the annotations attached to them.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    images: Vec<ImageEntry>,
    annotations: Vec<Annotation>,
    image_index: HashMap<u64, usize>,
    by_image: HashMap<u64, Vec<usize>>,
}

/// Counts produced by ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub images: usize,
    pub annotations: usize,
    pub images_per_scanner: BTreeMap<String, usize>,
    pub annotations_per_class: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn new(images: Vec<ImageEntry>, annotations: Vec<Annotation>) -> Result<Self, SamplerError> {
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(SamplerError::Schema(format!(
                    "images[{i}] (id {}): width and height must be positive",
                    img.id
                )));
            }
            if image_index.insert(img.id, i).is_some() {
                return Err(SamplerError::Schema(format!("duplicate image id {}", img.id)));
            }
        }
        let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut seen = HashSet::with_capacity(annotations.len());
        for (i, a) in annotations.iter().enumerate() {
            if !seen.insert(a.id) {
                return Err(SamplerError::Schema(format!("duplicate annotation id {}", a.id)));
            }
            if !image_index.contains_key(&a.image_id) {
                return Err(SamplerError::Schema(format!(
                    "annotations[{i}] (id {}) references unknown image_id {}",
                    a.id, a.image_id
                )));
            }
            by_image.entry(a.image_id).or_default().push(i);
        }
        Ok(DatasetManifest {
            images,
            annotations,
            image_index,
            by_image,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, SamplerError> {
        let file: ManifestFile = serde_json::from_str(text)
            .map_err(|e| SamplerError::Schema(format!("line {} column {}: {e}", e.line(), e.column())))?;
        let mut annotations = Vec::with_capacity(file.annotations.len());
        for (i, rec) in file.annotations.into_iter().enumerate() {
            let [x0, y0, x1, y1] = rec.bbox;
            let bbox = BBox::new(x0, y0, x1, y1)
                .map_err(|e| SamplerError::Schema(format!("annotations[{i}].bbox (id {}): {e}", rec.id)))?;
            annotations.push(
                Annotation::from_box(rec.id, rec.image_id, bbox, rec.category)
                    .map_err(|e| SamplerError::Schema(format!("annotations[{i}] (id {}): {e}", rec.id)))?,
            );
        }
        DatasetManifest::new(file.images, annotations)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SamplerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SamplerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        DatasetManifest::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = ManifestFile {
            images: self.images.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|a| AnnotationRecord {
                    id: a.id,
                    image_id: a.image_id,
                    bbox: [a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max],
                    category: a.label,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes")
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &Annotation> {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.annotations[i])
    }

    pub fn annotation_count(&self, image_id: u64) -> usize {
        self.by_image.get(&image_id).map_or(0, Vec::len)
    }

    /// Image ids grouped by scanner, each group sorted ascending.
    pub fn scanners(&self) -> BTreeMap<&str, Vec<u64>> {
        let mut groups: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        for img in &self.images {
            groups.entry(img.scanner.as_str()).or_default().push(img.id);
        }
        for ids in groups.values_mut() {
            ids.sort_unstable();
        }
        groups
    }

    /// Counts per scanner and class. `image_root`, when given, is checked for missing files.
    pub fn report(&self, image_root: Option<&Path>) -> ManifestReport {
        let mut warnings = Vec::new();
        if self.annotations.is_empty() {
            warnings.push("manifest has no annotations".to_string());
        }
        if let Some(root) = image_root {
            for img in &self.images {
                let p = root.join(&img.file_name);
                if !p.exists() {
                    warnings.push(format!("image {} file missing: {}", img.id, p.display()));
                }
            }
        }
        let images_per_scanner = self
            .scanners()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.len()))
            .collect();
        let mut annotations_per_class = BTreeMap::new();
        for a in &self.annotations {
            *annotations_per_class.entry(a.label.to_string()).or_insert(0) += 1;
        }
        ManifestReport {
            images: self.images.len(),
            annotations: self.annotations.len(),
            images_per_scanner,
            annotations_per_class,
            warnings,
        }
    }
}
