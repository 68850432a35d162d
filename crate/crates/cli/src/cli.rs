//! Argument parsing and dispatch.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mitodg_core::anchors::{AnchorConfig, DeParams, FitnessObjective};
use mitodg_core::augment::{PolicyConfig, TransformKind};
use mitodg_core::detect::MockSettings;
use mitodg_core::eval::{ClassFilter, MatchConfig};
use mitodg_core::io::{detections_to_jsonl, read_detections, write_atomic};
use mitodg_core::sampler::{DatasetManifest, PatchSpec};
use mitodg_core::tiler::{MergeRule, TilingConfig};
use mitodg_core::Label;
use serde::Serialize;

use crate::commands::{self, SplitPart};
use crate::config::{DetectorConfig, Paths, RunConfig};
use crate::pipeline::run_pipeline;

#[derive(Parser, Debug)]
#[command(name = "mitodg", version, about = "Mitosis-detection data toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a manifest and summarize it.
    Ingest(IngestArgs),
    /// Render a transforms-by-strengths PNG grid for one image.
    Preview(PreviewArgs),
    /// Per-scanner rotation folds.
    SplitFolds(SplitFoldsArgs),
    /// Draw annotation-centred training patches.
    Sample(SampleArgs),
    /// Search shared anchor scales with differential evolution.
    OptimizeAnchors(OptimizeAnchorsArgs),
    /// Tiled inference with the mock or replay detector.
    Tile(TileArgs),
    /// Precision/recall/F1 at a fixed threshold.
    Evaluate(EvaluateArgs),
    /// Pick the confidence threshold with the best F1.
    OptimizeThreshold(OptimizeThresholdArgs),
    /// Folds, tiled detection, threshold selection and report in one run.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Check that every image file exists under this directory.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Comma-separated transform names; all 19 when omitted.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<TransformKind>,
    #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_PREVIEW_STRENGTHS)]
    pub strengths: Vec<f64>,
    /// Policy TOML whose `params` table sets transform magnitudes.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitFoldsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SplitSelect {
    /// folds.json written by `split-folds`.
    #[arg(long)]
    pub folds_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, value_enum, default_value_t = SplitPart::All)]
    pub split: SplitPart,
}

impl SplitSelect {
    fn resolve(&self, manifest: &DatasetManifest) -> anyhow::Result<BTreeSet<u64>> {
        let folds = match &self.folds_file {
            Some(p) => commands::read_folds(p)?,
            None => Vec::new(),
        };
        let fold = match &self.folds_file {
            Some(p) => Some(
                folds
                    .get(self.fold)
                    .with_context(|| format!("{} has no fold {}", p.display(), self.fold))?,
            ),
            None => None,
        };
        commands::split_ids(manifest, fold, self.split)
    }

    fn subset(&self, manifest: &DatasetManifest) -> anyhow::Result<Option<BTreeSet<u64>>> {
        if self.split == SplitPart::All {
            return Ok(None);
        }
        self.resolve(manifest).map(Some)
    }
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[command(flatten)]
    pub select: SplitSelect,
    #[arg(long, default_value_t = 448)]
    pub patch_size: u32,
    /// Only require the annotation centre, not its whole box, inside the patch.
    #[arg(long)]
    pub center_only: bool,
    /// Augment each patch with this policy (TOML).
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Augment with the default policy.
    #[arg(long, conflicts_with = "policy")]
    pub augment: bool,
    /// Receives patch-NNNN.png files and patches.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassArg {
    MitoticFigure,
    Imposter,
    All,
}

impl From<ClassArg> for ClassFilter {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::MitoticFigure => ClassFilter::MitoticFigure,
            ClassArg::Imposter => ClassFilter::Imposter,
            ClassArg::All => ClassFilter::All,
        }
    }
}

#[derive(Args, Debug)]
pub struct OptimizeAnchorsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Boxes of this class enter the fitness.
    #[arg(long, value_enum, default_value_t = ClassArg::All)]
    pub class: ClassArg,
    #[arg(long, default_value_t = 15)]
    pub population: usize,
    #[arg(long, default_value_t = 200)]
    pub generations: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 3)]
    pub scales: usize,
    #[arg(long, default_value_t = 0.4)]
    pub lower: f64,
    #[arg(long, default_value_t = 3.0)]
    pub upper: f64,
    /// Maximize recall at this IoU instead of the mean best IoU.
    #[arg(long)]
    pub recall_iou: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DetectorKind {
    Mock,
    Replay,
}

#[derive(Args, Debug)]
pub struct DetectorArgs {
    #[arg(long, value_enum, default_value_t = DetectorKind::Mock)]
    pub detector: DetectorKind,
    /// Per-tile detections for the replay detector.
    #[arg(long, required_if_eq("detector", "replay"))]
    pub replay: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    pub false_positive_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 1.0)]
    pub confidence_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub confidence_max: f64,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        match self.detector {
            DetectorKind::Mock => DetectorConfig::Mock(MockSettings {
                dropout: self.dropout,
                false_positive_rate: self.false_positive_rate,
                jitter: self.jitter,
                confidence: (self.confidence_min, self.confidence_max),
            }),
            DetectorKind::Replay => DetectorConfig::Replay {
                path: self.replay.clone().unwrap_or_default(),
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct TilingArgs {
    #[arg(long, default_value_t = 448)]
    pub tile: u32,
    #[arg(long, default_value_t = 64)]
    pub overlap: u32,
    /// Center-distance merge radius in pixels.
    #[arg(long, default_value_t = 30.0, conflicts_with = "merge_iou")]
    pub merge_radius: f64,
    /// Merge by IoU instead of center distance.
    #[arg(long)]
    pub merge_iou: Option<f64>,
}

impl TilingArgs {
    fn config(&self) -> (TilingConfig, MergeRule) {
        let merge = match self.merge_iou {
            Some(threshold) => MergeRule::Iou { threshold },
            None => MergeRule::CenterDistance {
                radius: self.merge_radius,
            },
        };
        (
            TilingConfig {
                tile: self.tile,
                overlap: self.overlap,
            },
            merge,
        )
    }
}

#[derive(Args, Debug)]
pub struct TileArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Required for the mock detector.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub tiling: TilingArgs,
    #[command(flatten)]
    pub select: SplitSelect,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long, default_value_t = 30.0)]
    pub radius: f64,
    #[arg(long, value_enum, default_value_t = ClassArg::MitoticFigure)]
    pub class: ClassArg,
}

impl MatchArgs {
    fn config(&self) -> MatchConfig {
        MatchConfig {
            radius: self.radius,
            class_filter: self.class.into(),
        }
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub select: SplitSelect,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-image tp/fp/fn CSV.
    #[arg(long)]
    pub per_image: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OptimizeThresholdArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub select: SplitSelect,
    /// One threshold per scanner instead of a pooled one.
    #[arg(long)]
    pub per_scanner: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required unless the config file sets it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Write the merged configuration here and exit.
    #[arg(long)]
    pub dump_config: Option<PathBuf>,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_policy(path: Option<&Path>) -> anyhow::Result<PolicyConfig> {
    match path {
        None => Ok(PolicyConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let policy = PolicyConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            policy.validate()?;
            Ok(policy)
        }
    }
}

fn root_or_manifest_dir(root: Option<&Path>, manifest: &Path) -> PathBuf {
    root.map(Path::to_path_buf).unwrap_or_else(|| {
        Paths {
            manifest: manifest.to_path_buf(),
            image_root: None,
            output: PathBuf::new(),
        }
        .image_root()
    })
}

fn pipeline_config(args: &PipelineArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let (Some(seed), Some(manifest), Some(output)) = (args.seed, &args.manifest, &args.output) else {
                bail!("without --config, --seed, --manifest and --output are required");
            };
            RunConfig::new(
                seed,
                Paths {
                    manifest: manifest.clone(),
                    image_root: None,
                    output: output.clone(),
                },
            )
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = &args.manifest {
        cfg.paths.manifest = m.clone();
    }
    if let Some(r) = &args.image_root {
        cfg.paths.image_root = Some(r.clone());
    }
    if let Some(o) = &args.output {
        cfg.paths.output = o.clone();
    }
    if let Some(n) = args.folds {
        cfg.folds.count = n;
    }
    if let Some(k) = args.fold {
        cfg.folds.index = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let (_, report) = commands::ingest(&a.manifest, a.image_root.as_deref())?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_json(&report, a.out.as_deref())
        }
        Command::Preview(a) => {
            let kinds = if a.kinds.is_empty() {
                TransformKind::ALL.to_vec()
            } else {
                a.kinds.clone()
            };
            let policy = load_policy(a.policy.as_deref())?;
            let png = commands::preview(&a.image, &kinds, &a.strengths, &policy.params, a.seed)?;
            write_atomic(&a.out, &png)?;
            Ok(())
        }
        Command::SplitFolds(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let folds = commands::split_folds(&manifest, a.folds, a.seed)?;
            write_json(&folds, Some(&a.out))
        }
        Command::Sample(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let split = a.select.resolve(&manifest)?;
            let source = commands::file_source(&root_or_manifest_dir(a.image_root.as_deref(), &a.manifest));
            let spec = PatchSpec {
                size: a.patch_size,
                require_full_annotation: !a.center_only,
                ..PatchSpec::default()
            };
            let policy = if a.augment || a.policy.is_some() {
                Some(load_policy(a.policy.as_deref())?)
            } else {
                None
            };
            let patches = commands::sample(&manifest, &source, &split, &spec, policy.as_ref(), a.count, a.seed)?;
            let mut lines = String::new();
            for (i, p) in patches.iter().enumerate() {
                let file = format!("patch-{i:04}.png");
                write_atomic(&a.out_dir.join(&file), &p.image.encode_png())?;
                let record = serde_json::json!({
                    "file": file,
                    "provenance": p.provenance,
                    "annotations": p.annotations,
                    "augmentation": p.augmentation,
                });
                lines.push_str(&serde_json::to_string(&record)?);
                lines.push('\n');
            }
            write_atomic(&a.out_dir.join("patches.jsonl"), lines.as_bytes())?;
            Ok(())
        }
        Command::OptimizeAnchors(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let labels: Vec<Label> = match a.class {
                ClassArg::MitoticFigure => vec![Label::MitoticFigure],
                ClassArg::Imposter => vec![Label::Imposter],
                ClassArg::All => vec![Label::MitoticFigure, Label::Imposter],
            };
            let de = DeParams {
                population: a.population,
                max_generations: a.generations,
                tolerance: a.tolerance,
                bounds: vec![(a.lower, a.upper); a.scales],
                ..DeParams::default()
            };
            let objective = match a.recall_iou {
                Some(threshold) => FitnessObjective::RecallAtIou { threshold },
                None => FitnessObjective::MeanMaxIou,
            };
            let report =
                commands::optimize_anchors(&manifest, &labels, &AnchorConfig::default(), &de, objective, a.seed)?;
            write_json(&report, a.out.as_deref())
        }
        Command::Tile(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let images = a.select.resolve(&manifest)?;
            let source = commands::file_source(&root_or_manifest_dir(a.image_root.as_deref(), &a.manifest));
            let seed = match (a.detector.detector, a.seed) {
                (DetectorKind::Mock, None) => bail!("--seed is required with the mock detector"),
                (_, seed) => seed.unwrap_or(0),
            };
            let detector = commands::build_detector(&a.detector.config(), &manifest, seed)?;
            let (tiling, merge) = a.tiling.config();
            let dets = commands::tile(&manifest, &source, &images, detector.as_ref(), &tiling, merge)?;
            write_atomic(&a.out, detections_to_jsonl(&dets).as_bytes())?;
            Ok(())
        }
        Command::Evaluate(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let dets = read_detections(&a.detections)?;
            let subset = a.select.subset(&manifest)?;
            let (report, rows) =
                commands::evaluate(&dets, &manifest, &a.matching.config(), a.threshold, subset.as_ref());
            if let Some(p) = &a.per_image {
                write_atomic(p, &commands::per_image_csv(&rows)?)?;
            }
            write_json(&report, a.out.as_deref())
        }
        Command::OptimizeThreshold(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let dets = read_detections(&a.detections)?;
            let subset = a.select.subset(&manifest)?;
            let matching = a.matching.config();
            if a.per_scanner {
                let reports = commands::optimize_threshold_per_scanner(&dets, &manifest, &matching, subset.as_ref());
                write_json(&reports, a.out.as_deref())
            } else {
                let report = commands::optimize_threshold(&dets, &manifest, &matching, subset.as_ref());
                write_json(&report, a.out.as_deref())
            }
        }
        Command::Pipeline(a) => {
            let cfg = pipeline_config(&a)?;
            if let Some(p) = &a.dump_config {
                write_atomic(p, cfg.to_toml_string().as_bytes())?;
                return Ok(());
            }
            let outcome = run_pipeline(&cfg)?;
            let r = &outcome.report;
            eprintln!(
                "{} detections; threshold {:.4}; test tp {} fp {} fn {} f1 {:.4}; artifacts in {}",
                outcome.detections,
                r.threshold,
                r.tp,
                r.fp,
                r.fn_,
                r.f1,
                outcome.output.display()
            );
            Ok(())
        }
    }
}
