use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ImageEntry, SamplerError};
use crate::image::Rgb8Image;
use crate::rng::RandomStream;
use crate::types::{Annotation, BBox, Label, Point};

/// How the target annotation is drawn from the chosen image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationDraw {
    /// Uniform over the image's annotations.
    #[default]
    Uniform,
    /// Uniform over the classes present, then uniform within the class.
    Stratified,
}

fn default_size() -> u32 {
    448
}

fn default_true() -> bool {
    true
}

fn default_visible() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    #[serde(default = "default_size")]
    pub size: u32,
    /// Keep the whole target box inside the patch; otherwise only its center.
    #[serde(default = "default_true")]
    pub require_full_annotation: bool,
    /// Neighbouring annotations survive clipping only if this fraction of their area remains.
    #[serde(default = "default_visible")]
    pub min_visible_fraction: f64,
    #[serde(default)]
    pub annotation_draw: AnnotationDraw,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            size: default_size(),
            require_full_annotation: true,
            min_visible_fraction: default_visible(),
            annotation_draw: AnnotationDraw::Uniform,
        }
    }
}

/// Where a patch came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchProvenance {
    pub image_id: u64,
    pub annotation_id: u64,
    pub origin: (u32, u32),
    pub size: u32,
    /// Images drawn first but skipped for having no annotations.
    pub skipped_images: Vec<u64>,
    pub stream_path: Vec<u64>,
}

/// Patch geometry and the annotations it carries, before any pixels are read.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPlan {
    pub provenance: PatchProvenance,
    /// In patch coordinates.
    pub annotations: Vec<Annotation>,
}

/// Inclusive integer range of feasible crop origins along one axis.
pub fn feasible_origins(
    lo_edge: f64,
    hi_edge: f64,
    center: f64,
    patch: u32,
    dim: u32,
    full: bool,
) -> Option<(i64, i64)> {
    let size = patch as f64;
    let (lo, hi) = if full {
        ((hi_edge - size).ceil(), lo_edge.floor())
    } else {
        ((center - size).floor() + 1.0, center.floor())
    };
    let lo = (lo as i64).max(0);
    let hi = (hi as i64).min(dim as i64 - patch as i64);
    (lo <= hi).then_some((lo, hi))
}

fn pick_annotation<'a>(candidates: &[&'a Annotation], mode: AnnotationDraw, rng: &mut RandomStream) -> &'a Annotation {
    match mode {
        AnnotationDraw::Uniform => candidates[rng.below(candidates.len() as u64) as usize],
        AnnotationDraw::Stratified => {
            let classes: BTreeSet<Label> = candidates.iter().map(|a| a.label).collect();
            let classes: Vec<Label> = classes.into_iter().collect();
            let class = classes[rng.below(classes.len() as u64) as usize];
            let within: Vec<&Annotation> = candidates.iter().copied().filter(|a| a.label == class).collect();
            within[rng.below(within.len() as u64) as usize]
        }
    }
}

/// Draws an image uniformly from `split`, one of its annotations, and a crop origin
/// uniformly among those that keep the annotation inside the patch and the patch inside
/// the image.
pub fn plan_patch(
    manifest: &DatasetManifest,
    spec: &PatchSpec,
    split: &BTreeSet<u64>,
    rng: &RandomStream,
) -> Result<PatchPlan, SamplerError> {
    if split.is_empty() {
        return Err(SamplerError::EmptySplit);
    }
    if spec.size == 0 {
        return Err(SamplerError::InvalidPatchSize(0));
    }
    let ids: Vec<u64> = split.iter().copied().collect();
    for &id in &ids {
        if manifest.image(id).is_none() {
            return Err(SamplerError::UnknownImage(id));
        }
    }
    if ids.iter().all(|&id| manifest.annotation_count(id) == 0) {
        return Err(SamplerError::NoAnnotatedImages);
    }

    let mut stream = rng.clone();
    let mut skipped = Vec::new();
    let image = loop {
        let id = ids[stream.below(ids.len() as u64) as usize];
        if manifest.annotation_count(id) > 0 {
            break manifest.image(id).expect("checked above");
        }
        skipped.push(id);
    };
    if spec.size > image.width || spec.size > image.height {
        return Err(SamplerError::PatchLargerThanImage {
            image_id: image.id,
            size: spec.size,
            width: image.width,
            height: image.height,
        });
    }

    let candidates: Vec<&Annotation> = manifest.annotations_for(image.id).collect();
    let target = pick_annotation(&candidates, spec.annotation_draw, &mut stream);
    let b = &target.bbox;
    let full = spec.require_full_annotation;
    let unsatisfiable = || SamplerError::UnsatisfiableCrop {
        annotation_id: target.id,
        size: spec.size,
    };
    let (x_lo, x_hi) =
        feasible_origins(b.x_min, b.x_max, target.center.x, spec.size, image.width, full).ok_or_else(unsatisfiable)?;
    let (y_lo, y_hi) =
        feasible_origins(b.y_min, b.y_max, target.center.y, spec.size, image.height, full).ok_or_else(unsatisfiable)?;
    let ox = stream.int_inclusive(x_lo, x_hi) as u32;
    let oy = stream.int_inclusive(y_lo, y_hi) as u32;

    let annotations = annotations_in_window(
        candidates.iter().copied(),
        (ox, oy),
        spec.size,
        spec.min_visible_fraction,
        Some(target.id),
    );
    Ok(PatchPlan {
        provenance: PatchProvenance {
            image_id: image.id,
            annotation_id: target.id,
            origin: (ox, oy),
            size: spec.size,
            skipped_images: skipped,
            stream_path: rng.path().to_vec(),
        },
        annotations,
    })
}

/// Clips annotations to the window and translates them into its frame. Annotations whose
/// remaining area falls below `min_visible` of the original are dropped, except `keep`.
pub fn annotations_in_window<'a>(
    annotations: impl Iterator<Item = &'a Annotation>,
    origin: (u32, u32),
    size: u32,
    min_visible: f64,
    keep: Option<u64>,
) -> Vec<Annotation> {
    let (ox, oy) = (origin.0 as f64, origin.1 as f64);
    let window = BBox {
        x_min: ox,
        y_min: oy,
        x_max: ox + size as f64,
        y_max: oy + size as f64,
    };
    let mut out = Vec::new();
    for a in annotations {
        let Some(clipped) = a.bbox.intersection(&window) else {
            continue;
        };
        if Some(a.id) != keep && clipped.area() < min_visible * a.bbox.area() {
            continue;
        }
        let center = if clipped.contains(a.center) {
            a.center
        } else {
            clipped.center()
        };
        out.push(Annotation {
            id: a.id,
            image_id: a.image_id,
            center: Point::new(center.x - ox, center.y - oy),
            bbox: clipped.translate(-ox, -oy),
            label: a.label,
        });
    }
    out
}

/// Pixel provider for manifest images.
pub trait ImageSource: Sync {
    fn load(&self, entry: &ImageEntry) -> Result<Arc<Rgb8Image>, SamplerError>;
}

/// Reads images from `root/file_name`, optionally keeping decoded rasters in memory.
pub struct FileImageSource {
    root: PathBuf,
    cache: Option<RwLock<HashMap<u64, Arc<Rgb8Image>>>>,
}

impl FileImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileImageSource {
            root: root.into(),
            cache: None,
        }
    }

    pub fn cached(root: impl Into<PathBuf>) -> Self {
        FileImageSource {
            root: root.into(),
            cache: Some(RwLock::new(HashMap::new())),
        }
    }

    pub fn path_of(&self, entry: &ImageEntry) -> PathBuf {
        self.root.join(&entry.file_name)
    }
}

impl ImageSource for FileImageSource {
    fn load(&self, entry: &ImageEntry) -> Result<Arc<Rgb8Image>, SamplerError> {
        if let Some(cache) = &self.cache {
            if let Some(img) = cache.read().expect("cache lock").get(&entry.id) {
                return Ok(Arc::clone(img));
            }
        }
        let img = Rgb8Image::open(self.path_of(entry))?;
        if img.dimensions() != (entry.width, entry.height) {
            return Err(SamplerError::DimensionMismatch {
                image_id: entry.id,
                expected: (entry.width, entry.height),
                actual: img.dimensions(),
            });
        }
        let img = Arc::new(img);
        if let Some(cache) = &self.cache {
            cache.write().expect("cache lock").insert(entry.id, Arc::clone(&img));
        }
        Ok(img)
    }
}

/// In-memory source keyed by image id.
#[derive(Default)]
pub struct MemoryImageSource {
    images: HashMap<u64, Arc<Rgb8Image>>,
}

impl MemoryImageSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u64, image: Rgb8Image) {
        self.images.insert(id, Arc::new(image));
    }
}

impl ImageSource for MemoryImageSource {
    fn load(&self, entry: &ImageEntry) -> Result<Arc<Rgb8Image>, SamplerError> {
        self.images
            .get(&entry.id)
            .cloned()
            .ok_or(SamplerError::UnknownImage(entry.id))
    }
}

/// Plans a patch and cuts its pixels from the source image.
pub fn sample_patch(
    manifest: &DatasetManifest,
    spec: &PatchSpec,
    split: &BTreeSet<u64>,
    source: &dyn ImageSource,
    rng: &RandomStream,
) -> Result<(Rgb8Image, Vec<Annotation>, PatchProvenance), SamplerError> {
    let plan = plan_patch(manifest, spec, split, rng)?;
    let entry = manifest.image(plan.provenance.image_id).expect("planned image exists");
    let image = source.load(entry)?;
    let patch = image.crop(plan.provenance.origin, (spec.size, spec.size))?;
    Ok((patch, plan.annotations, plan.provenance))
}

/// `count` patches; patch `i` uses stream `rng / i`, so results do not depend on thread count.
pub fn sample_batch(
    manifest: &DatasetManifest,
    spec: &PatchSpec,
    split: &BTreeSet<u64>,
    source: &dyn ImageSource,
    rng: &RandomStream,
    count: usize,
) -> Result<Vec<(Rgb8Image, Vec<Annotation>, PatchProvenance)>, SamplerError> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_patch(manifest, spec, split, source, &rng.derive(i as u64)))
        .collect()
}
