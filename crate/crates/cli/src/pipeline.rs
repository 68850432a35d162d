//! End-to-end run: folds, tiled detection, threshold selection and held-out report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use mitodg_core::eval::{evaluate_at, EvalReport};
use mitodg_core::io::{detections_to_jsonl, write_atomic};
use mitodg_core::sampler::{DatasetManifest, FoldSplit};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::{self, SplitPart};
use crate::config::{DetectorConfig, RunConfig};

pub const FOLDS_FILE: &str = "folds.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const PROVENANCE_FILE: &str = "run-provenance.json";

#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pipeline stage `{}` failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

trait Stage<T> {
    fn stage(self, name: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, name: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage: name,
            source: e.into(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    /// Held-out report at the selected threshold.
    pub report: EvalReport,
    /// Threshold selection on the fold's train+val images.
    pub selection: EvalReport,
    pub detections: usize,
    pub output: PathBuf,
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    inputs: Inputs,
    threshold_selection: &'a EvalReport,
    outputs: BTreeMap<&'static str, String>,
}

#[derive(Serialize)]
struct Inputs {
    manifest: FileDigest,
    images: BTreeMap<u64, FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replay: Option<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_file(path: &Path) -> anyhow::Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    text.into_bytes()
}

/// Runs every stage, writing artifacts as soon as each is ready; a failing stage leaves
/// the artifacts of earlier stages in place.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome, StageError> {
    config.validate().stage("config")?;
    let out = &config.paths.output;
    std::fs::create_dir_all(out).stage("output")?;

    let manifest = DatasetManifest::load(&config.paths.manifest).stage("ingest")?;

    let folds = commands::split_folds(&manifest, config.folds.count, config.seed).stage("folds")?;
    write_atomic(&out.join(FOLDS_FILE), &json_bytes(&folds)).stage("folds")?;
    let fold: &FoldSplit = &folds[config.folds.index];

    let detector = commands::build_detector(&config.detector, &manifest, config.seed).stage("detector")?;
    let source = commands::file_source(&config.paths.image_root());
    let all = commands::split_ids(&manifest, None, SplitPart::All).stage("tile")?;
    let detections = commands::tile(
        &manifest,
        &source,
        &all,
        detector.as_ref(),
        &config.tiling,
        config.merge,
    )
    .stage("tile")?;
    write_atomic(&out.join(DETECTIONS_FILE), detections_to_jsonl(&detections).as_bytes()).stage("tile")?;

    let selection = commands::optimize_threshold(&detections, &manifest, &config.matching, Some(&fold.train_val()));
    let (test_dets, test_gts): (Vec<_>, Vec<_>) = (
        detections
            .iter()
            .filter(|d| fold.test.contains(&d.image_id))
            .cloned()
            .collect(),
        manifest
            .annotations()
            .iter()
            .filter(|a| fold.test.contains(&a.image_id))
            .cloned()
            .collect(),
    );
    let report = evaluate_at(&test_dets, &test_gts, &config.matching, selection.threshold);
    let report_bytes = json_bytes(&report);
    write_atomic(&out.join(REPORT_FILE), &report_bytes).stage("evaluate")?;

    let root = config.paths.image_root();
    let images = manifest
        .images()
        .iter()
        .map(|e| Ok((e.id, digest_file(&root.join(&e.file_name))?)))
        .collect::<anyhow::Result<BTreeMap<_, _>>>()
        .stage("provenance")?;
    let replay = match &config.detector {
        DetectorConfig::Replay { path } => Some(digest_file(path).stage("provenance")?),
        DetectorConfig::Mock(_) => None,
    };
    let mut outputs = BTreeMap::new();
    for name in [FOLDS_FILE, DETECTIONS_FILE, REPORT_FILE] {
        outputs.insert(name, digest_file(&out.join(name)).stage("provenance")?.sha256);
    }
    let provenance = Provenance {
        tool: "mitodg",
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        inputs: Inputs {
            manifest: digest_file(&config.paths.manifest).stage("provenance")?,
            images,
            replay,
        },
        threshold_selection: &selection,
        outputs,
    };
    write_atomic(&out.join(PROVENANCE_FILE), &json_bytes(&provenance)).stage("provenance")?;

    Ok(PipelineOutcome {
        report,
        selection,
        detections: detections.len(),
        output: out.clone(),
    })
}
