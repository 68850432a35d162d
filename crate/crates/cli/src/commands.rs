//! One function per subcommand; `main` only parses flags and writes outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context};
use mitodg_core::anchors::{
    anchor_fitness_with, octave_scales, optimize_scales, AnchorConfig, DeParams, FitnessObjective, ScaleSearch,
    SEARCHED_SCALES,
};
use mitodg_core::augment::{
    augment, render_preview_grid, AugmentationLog, PolicyConfig, TransformKind, TransformParams,
};
use mitodg_core::detect::{MockDetector, ReplayDetector};
use mitodg_core::eval::{
    evaluate_at, optimize_threshold as optimize, optimize_threshold_by_group, per_image_counts, EvalReport,
    ImageCounts, MatchConfig,
};
use mitodg_core::io::read_detection_lines;
use mitodg_core::sampler::{
    make_folds, sample_patch, DatasetManifest, FileImageSource, FoldSplit, ImageSource, ManifestReport,
    PatchProvenance, PatchSpec,
};
use mitodg_core::tiler::{run_tiled, Detector, MergeRule, TilingConfig};
use mitodg_core::{Annotation, BBox, DetectionRecord, Label, RandomStream, Rgb8Image};
use serde::{Deserialize, Serialize};

use crate::config::DetectorConfig;

/// Derivation names of the top-level streams.
pub const STREAM_FOLDS: &str = "folds";
pub const STREAM_DETECTOR: &str = "detector";
pub const STREAM_SAMPLE: &str = "sample";
pub const STREAM_ANCHORS: &str = "anchors";
pub const STREAM_PREVIEW: &str = "preview";

pub fn ingest(manifest: &Path, image_root: Option<&Path>) -> anyhow::Result<(DatasetManifest, ManifestReport)> {
    let m = DatasetManifest::load(manifest)?;
    let report = m.report(image_root);
    Ok((m, report))
}

pub const DEFAULT_PREVIEW_STRENGTHS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// PNG bytes of the kinds-by-strengths grid.
pub fn preview(
    image: &Path,
    kinds: &[TransformKind],
    strengths: &[f64],
    params: &TransformParams,
    seed: u64,
) -> anyhow::Result<Vec<u8>> {
    let img = Rgb8Image::open(image)?;
    let rng = RandomStream::new(seed).derive_name(STREAM_PREVIEW);
    let grid = render_preview_grid(&img, kinds, strengths, params, &rng)?;
    Ok(grid.encode_png())
}

pub fn split_folds(manifest: &DatasetManifest, count: usize, seed: u64) -> anyhow::Result<Vec<FoldSplit>> {
    Ok(make_folds(
        manifest,
        count,
        &RandomStream::new(seed).derive_name(STREAM_FOLDS),
    )?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
    TrainVal,
    All,
}

/// Image ids of one part of a fold; `All` ignores the fold.
pub fn split_ids(
    manifest: &DatasetManifest,
    fold: Option<&FoldSplit>,
    part: SplitPart,
) -> anyhow::Result<BTreeSet<u64>> {
    let all = || manifest.images().iter().map(|i| i.id).collect();
    Ok(match (part, fold) {
        (SplitPart::All, _) => all(),
        (_, None) => bail!("split {part:?} needs a fold"),
        (SplitPart::Train, Some(f)) => f.train.clone(),
        (SplitPart::Val, Some(f)) => f.val.clone(),
        (SplitPart::Test, Some(f)) => f.test.clone(),
        (SplitPart::TrainVal, Some(f)) => f.train_val(),
    })
}

pub fn read_folds(path: &Path) -> anyhow::Result<Vec<FoldSplit>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A sampled (and optionally augmented) training patch.
pub struct SampledPatch {
    pub image: Rgb8Image,
    pub annotations: Vec<Annotation>,
    pub provenance: PatchProvenance,
    pub augmentation: Option<AugmentationLog>,
}

/// Patch `i` uses stream `seed / "sample" / i`; its augmentation uses the child `/ 0`.
pub fn sample(
    manifest: &DatasetManifest,
    source: &dyn ImageSource,
    split: &BTreeSet<u64>,
    spec: &PatchSpec,
    policy: Option<&PolicyConfig>,
    count: usize,
    seed: u64,
) -> anyhow::Result<Vec<SampledPatch>> {
    let root = RandomStream::new(seed).derive_name(STREAM_SAMPLE);
    (0..count)
        .map(|i| {
            let rng = root.derive(i as u64);
            let (image, annotations, provenance) = sample_patch(manifest, spec, split, source, &rng)?;
            match policy {
                None => Ok(SampledPatch {
                    image,
                    annotations,
                    provenance,
                    augmentation: None,
                }),
                Some(p) => {
                    let (image, annotations, log) = augment(&image, &annotations, p, &rng.derive(0))?;
                    Ok(SampledPatch {
                        image,
                        annotations,
                        provenance,
                        augmentation: Some(log),
                    })
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub search: ScaleSearch,
    pub boxes: usize,
    /// Fitness of the reference scale sets under the same objective.
    pub octave_fitness: f64,
    pub reference_fitness: f64,
}

pub fn optimize_anchors(
    manifest: &DatasetManifest,
    labels: &[Label],
    anchors: &AnchorConfig,
    de: &DeParams,
    objective: FitnessObjective,
    seed: u64,
) -> anyhow::Result<AnchorReport> {
    let boxes: Vec<BBox> = manifest
        .annotations()
        .iter()
        .filter(|a| labels.contains(&a.label))
        .map(|a| a.bbox)
        .collect();
    let rng = RandomStream::new(seed).derive_name(STREAM_ANCHORS);
    let search = optimize_scales(&boxes, anchors, de, objective, &rng)?;
    Ok(AnchorReport {
        boxes: boxes.len(),
        octave_fitness: anchor_fitness_with(&octave_scales(), &boxes, anchors, objective)?,
        reference_fitness: anchor_fitness_with(&SEARCHED_SCALES, &boxes, anchors, objective)?,
        search,
    })
}

pub fn build_detector(
    config: &DetectorConfig,
    manifest: &DatasetManifest,
    seed: u64,
) -> anyhow::Result<Box<dyn Detector>> {
    Ok(match config {
        DetectorConfig::Mock(settings) => {
            settings.validate().map_err(anyhow::Error::msg)?;
            Box::new(MockDetector::new(
                manifest,
                settings.clone(),
                RandomStream::new(seed).derive_name(STREAM_DETECTOR),
            ))
        }
        DetectorConfig::Replay { path } => {
            let lines = read_detection_lines(path)?;
            Box::new(ReplayDetector::from_lines(lines).map_err(anyhow::Error::msg)?)
        }
    })
}

/// Tiled inference over `images` (sorted by id). Output is ordered by image id, then rank.
pub fn tile(
    manifest: &DatasetManifest,
    source: &dyn ImageSource,
    images: &BTreeSet<u64>,
    detector: &dyn Detector,
    tiling: &TilingConfig,
    merge: MergeRule,
) -> anyhow::Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for &id in images {
        let entry = manifest
            .image(id)
            .with_context(|| format!("image {id} is not in the manifest"))?;
        let img = source.load(entry)?;
        let run = run_tiled(&img, id, detector, tiling, merge).with_context(|| format!("image {id}"))?;
        out.extend(run.detections);
    }
    Ok(out)
}

fn restrict<'a>(
    dets: &'a [DetectionRecord],
    gts: &'a [Annotation],
    images: Option<&BTreeSet<u64>>,
) -> (Vec<DetectionRecord>, Vec<Annotation>) {
    let keep = |id: u64| images.is_none_or(|s| s.contains(&id));
    (
        dets.iter().filter(|d| keep(d.image_id)).cloned().collect(),
        gts.iter().filter(|a| keep(a.image_id)).cloned().collect(),
    )
}

/// Report at a fixed threshold plus per-image counts.
pub fn evaluate(
    dets: &[DetectionRecord],
    manifest: &DatasetManifest,
    matching: &MatchConfig,
    threshold: f64,
    images: Option<&BTreeSet<u64>>,
) -> (EvalReport, Vec<ImageCounts>) {
    let (d, g) = restrict(dets, manifest.annotations(), images);
    (
        evaluate_at(&d, &g, matching, threshold),
        per_image_counts(&d, &g, matching, threshold),
    )
}

pub fn optimize_threshold(
    dets: &[DetectionRecord],
    manifest: &DatasetManifest,
    matching: &MatchConfig,
    images: Option<&BTreeSet<u64>>,
) -> EvalReport {
    let (d, g) = restrict(dets, manifest.annotations(), images);
    optimize(&d, &g, matching)
}

/// One optimized threshold per scanner.
pub fn optimize_threshold_per_scanner(
    dets: &[DetectionRecord],
    manifest: &DatasetManifest,
    matching: &MatchConfig,
    images: Option<&BTreeSet<u64>>,
) -> BTreeMap<String, EvalReport> {
    let (d, g) = restrict(dets, manifest.annotations(), images);
    optimize_threshold_by_group(&d, &g, matching, |id| manifest.image(id).map(|e| e.scanner.clone()))
}

pub fn per_image_csv(rows: &[ImageCounts]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

pub fn file_source(root: &Path) -> FileImageSource {
    FileImageSource::new(root)
}
