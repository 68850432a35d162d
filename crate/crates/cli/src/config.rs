//! Run configuration: one TOML (or JSON) document holding every knob of a run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mitodg_core::anchors::{AnchorConfig, DeParams, FitnessObjective};
use mitodg_core::augment::PolicyConfig;
use mitodg_core::detect::MockSettings;
use mitodg_core::eval::MatchConfig;
use mitodg_core::sampler::PatchSpec;
use mitodg_core::tiler::{MergeRule, TilingConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Seeds above `i64::MAX` are written as strings because TOML integers are signed.
mod seed_repr {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        if *seed <= i64::MAX as u64 {
            s.serialize_u64(*seed)
        } else {
            s.serialize_str(&seed.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub count: usize,
    /// Fold whose train+val images pick the threshold and whose test images are reported.
    pub index: usize,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig { count: 5, index: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DetectorConfig {
    /// Ground-truth driven stand-in detector.
    Mock(MockSettings),
    /// Pre-computed per-tile detections (JSON lines with `tile_x`/`tile_y`).
    Replay { path: PathBuf },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::Mock(MockSettings::default())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSearchConfig {
    pub anchors: AnchorConfig,
    pub objective: FitnessObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    /// Defaults to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    pub output: PathBuf,
}

impl Paths {
    pub fn image_root(&self) -> PathBuf {
        self.image_root.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(with = "seed_repr")]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub patch: PatchSpec,
    #[serde(default)]
    pub tiling: TilingConfig,
    #[serde(default)]
    pub merge: MergeRule,
    #[serde(default, rename = "match")]
    pub matching: MatchConfig,
    #[serde(default)]
    pub de: DeParams,
    #[serde(default)]
    pub anchor_search: AnchorSearchConfig,
    #[serde(default)]
    pub folds: FoldConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn new(seed: u64, paths: Paths) -> Self {
        RunConfig {
            seed,
            policy: PolicyConfig::default(),
            patch: PatchSpec::default(),
            tiling: TilingConfig::default(),
            merge: MergeRule::default(),
            matching: MatchConfig::default(),
            de: DeParams::default(),
            anchor_search: AnchorSearchConfig::default(),
            folds: FoldConfig::default(),
            detector: DetectorConfig::default(),
            paths,
        }
    }

    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// `.json` files are read as JSON, everything else as TOML.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            cfg.validate()?;
            cfg
        } else {
            RunConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.policy.validate()?;
        self.tiling.validate()?;
        self.de.validate()?;
        self.anchor_search.anchors.validate()?;
        if self.folds.count < 3 {
            bail!("folds.count must be at least 3, got {}", self.folds.count);
        }
        if self.folds.index >= self.folds.count {
            bail!(
                "folds.index {} out of range for {} folds",
                self.folds.index,
                self.folds.count
            );
        }
        if let DetectorConfig::Mock(settings) = &self.detector {
            settings.validate().map_err(|e| anyhow::anyhow!("detector: {e}"))?;
        }
        if !(self.matching.radius > 0.0) {
            bail!("match.radius must be positive");
        }
        Ok(())
    }
}
