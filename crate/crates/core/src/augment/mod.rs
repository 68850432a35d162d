//! Single-draw random augmentation.
//!
//! Every image is flipped horizontally and vertically at random, gets a uniformly random
//! channel permutation, and then exactly one transform drawn uniformly from the pool is
//! applied at a strength drawn from `U(0, max_strength)`. Every random choice is written
//! to an [`AugmentationLog`].

mod color;
mod filters;
mod noise;
mod pca;
mod photometric;
mod preview;
pub mod stain;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Rgb8Image;
use crate::rng::RandomStream;
use crate::types::Annotation;

pub use pca::{fancy_pca, fancy_pca_with};
pub use preview::{render_preview_grid, PREVIEW_BORDER};
pub use stain::{he_stain_augment, he_stain_perturb, od_to_rgb, rgb_to_od, StainBasis};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("augmentation pool is empty")]
    EmptyPool,
    #[error("unknown transform {0:?}")]
    UnknownTransform(String),
    #[error("{field} = {value} is outside {range}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("annotation {id} box lies outside the {width}x{height} image")]
    BoxOutOfBounds { id: u64, width: u32, height: u32 },
    #[error("preview needs at least one transform and one strength")]
    EmptyInput,
    #[error(transparent)]
    Stain(#[from] stain::StainError),
}

/// The nineteen pool transforms. Serialized names are stable identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    ColorJitter,
    HeStain,
    FancyPca,
    Hue,
    Saturation,
    Equalize,
    RandomContrast,
    AutoContrast,
    Clahe,
    Solarize,
    SolarizeAdd,
    Sharpness,
    GaussianBlur,
    Posterize,
    Cutout,
    IsoNoise,
    JpegArtifacts,
    PixelwiseChannelShuffle,
    GaussianNoise,
}

impl TransformKind {
    pub const ALL: [TransformKind; 19] = [
        TransformKind::ColorJitter,
        TransformKind::HeStain,
        TransformKind::FancyPca,
        TransformKind::Hue,
        TransformKind::Saturation,
        TransformKind::Equalize,
        TransformKind::RandomContrast,
        TransformKind::AutoContrast,
        TransformKind::Clahe,
        TransformKind::Solarize,
        TransformKind::SolarizeAdd,
        TransformKind::Sharpness,
        TransformKind::GaussianBlur,
        TransformKind::Posterize,
        TransformKind::Cutout,
        TransformKind::IsoNoise,
        TransformKind::JpegArtifacts,
        TransformKind::PixelwiseChannelShuffle,
        TransformKind::GaussianNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::ColorJitter => "color_jitter",
            TransformKind::HeStain => "he_stain",
            TransformKind::FancyPca => "fancy_pca",
            TransformKind::Hue => "hue",
            TransformKind::Saturation => "saturation",
            TransformKind::Equalize => "equalize",
            TransformKind::RandomContrast => "random_contrast",
            TransformKind::AutoContrast => "auto_contrast",
            TransformKind::Clahe => "clahe",
            TransformKind::Solarize => "solarize",
            TransformKind::SolarizeAdd => "solarize_add",
            TransformKind::Sharpness => "sharpness",
            TransformKind::GaussianBlur => "gaussian_blur",
            TransformKind::Posterize => "posterize",
            TransformKind::Cutout => "cutout",
            TransformKind::IsoNoise => "iso_noise",
            TransformKind::JpegArtifacts => "jpeg_artifacts",
            TransformKind::PixelwiseChannelShuffle => "pixelwise_channel_shuffle",
            TransformKind::GaussianNoise => "gaussian_noise",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| AugmentError::UnknownTransform(s.to_string()))
    }
}

/// Native magnitudes reached at strength 1. Every transform scales linearly from its
/// identity setting at strength 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformParams {
    /// Brightness/contrast/saturation factors drawn from `U(1 - r*s, 1 + r*s)`.
    pub color_jitter_range: f64,
    pub he_sigma: f64,
    pub fancy_pca_sigma: f64,
    pub hue_max_degrees: f64,
    pub saturation_range: f64,
    pub contrast_range: f64,
    pub clahe_clip_base: f64,
    pub clahe_clip_gain: f64,
    pub clahe_tiles: u32,
    pub solarize_add_max: f64,
    pub sharpness_gain: f64,
    pub blur_max_sigma: f64,
    pub posterize_max_bits_removed: f64,
    pub cutout_max_fraction: f64,
    pub cutout_fill: u8,
    pub iso_intensity: f64,
    pub iso_color_shift: f64,
    pub jpeg_quality_drop: f64,
    pub noise_max_sigma: f64,
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams {
            color_jitter_range: 0.6,
            he_sigma: 0.1,
            fancy_pca_sigma: 0.3,
            hue_max_degrees: 36.0,
            saturation_range: 1.0,
            contrast_range: 0.6,
            clahe_clip_base: 1.0,
            clahe_clip_gain: 3.0,
            clahe_tiles: 8,
            solarize_add_max: 110.0,
            sharpness_gain: 2.0,
            blur_max_sigma: 2.0,
            posterize_max_bits_removed: 6.0,
            cutout_max_fraction: 0.4,
            cutout_fill: 128,
            iso_intensity: 0.5,
            iso_color_shift: 0.04,
            jpeg_quality_drop: 70.0,
            noise_max_sigma: 40.0,
        }
    }
}

fn default_pool() -> Vec<TransformKind> {
    TransformKind::ALL.to_vec()
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "default_pool")]
    pub pool: Vec<TransformKind>,
    #[serde(default = "one")]
    pub max_strength: f64,
    #[serde(default = "half")]
    pub flip_h_prob: f64,
    #[serde(default = "half")]
    pub flip_v_prob: f64,
    #[serde(default = "yes")]
    pub channel_permute: bool,
    #[serde(default)]
    pub params: TransformParams,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            pool: default_pool(),
            max_strength: 1.0,
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
            channel_permute: true,
            params: TransformParams::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.pool.is_empty() {
            return Err(AugmentError::EmptyPool);
        }
        if !(self.max_strength > 0.0 && self.max_strength <= 1.0) {
            return Err(AugmentError::OutOfRange {
                field: "max_strength",
                value: self.max_strength,
                range: "(0, 1]",
            });
        }
        for (field, value) in [("flip_h_prob", self.flip_h_prob), ("flip_v_prob", self.flip_v_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(AugmentError::OutOfRange {
                    field,
                    value,
                    range: "[0, 1]",
                });
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("policy serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedDraw {
    pub name: String,
    pub value: f64,
}

/// Records scalar draws made inside a transform.
#[derive(Default, Debug)]
pub(crate) struct DrawLog(Vec<NamedDraw>);

impl DrawLog {
    pub(crate) fn record(&mut self, name: &str, value: f64) -> f64 {
        self.0.push(NamedDraw {
            name: name.to_string(),
            value,
        });
        value
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationLog {
    pub flipped_h: bool,
    pub flipped_v: bool,
    pub channel_perm: [usize; 3],
    pub chosen: TransformKind,
    pub strength: f64,
    pub inner_draws: Vec<NamedDraw>,
}

/// The policy-level decisions for one sample, before any pixel work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub flip_h: bool,
    pub flip_v: bool,
    pub channel_perm: [usize; 3],
    pub kind: TransformKind,
    pub strength: f64,
}

/// All six channel orders, identity first.
pub const CHANNEL_PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

const KEY_FLIPS: u64 = 0;
const KEY_PERMUTATION: u64 = 1;
const KEY_CHOICE: u64 = 2;
const KEY_TRANSFORM: u64 = 3;

pub fn plan_augmentation(policy: &PolicyConfig, rng: &RandomStream) -> Result<AugmentPlan, AugmentError> {
    policy.validate()?;
    let mut flips = rng.derive(KEY_FLIPS);
    let flip_h = flips.bernoulli(policy.flip_h_prob);
    let flip_v = flips.bernoulli(policy.flip_v_prob);
    let channel_perm = if policy.channel_permute {
        CHANNEL_PERMUTATIONS[rng.derive(KEY_PERMUTATION).below(6) as usize]
    } else {
        [0, 1, 2]
    };
    let mut choice = rng.derive(KEY_CHOICE);
    let kind = policy.pool[choice.below(policy.pool.len() as u64) as usize];
    let strength = choice.uniform(0.0, policy.max_strength);
    Ok(AugmentPlan {
        flip_h,
        flip_v,
        channel_perm,
        kind,
        strength,
    })
}

/// Executes a plan: flips, channel permutation, then the single pool transform.
pub fn apply_plan(
    image: &Rgb8Image,
    boxes: &[Annotation],
    plan: &AugmentPlan,
    params: &TransformParams,
    rng: &RandomStream,
) -> Result<(Rgb8Image, Vec<Annotation>, AugmentationLog), AugmentError> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    for a in boxes {
        let b = &a.bbox;
        if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
            return Err(AugmentError::BoxOutOfBounds {
                id: a.id,
                width: image.width(),
                height: image.height(),
            });
        }
    }

    let mut img = if plan.flip_h {
        image.flip_horizontal()
    } else {
        image.clone()
    };
    let mut out_boxes: Vec<Annotation> = if plan.flip_h {
        boxes.iter().map(|a| a.flip_horizontal(w)).collect()
    } else {
        boxes.to_vec()
    };
    if plan.flip_v {
        img = img.flip_vertical();
        out_boxes = out_boxes.iter().map(|a| a.flip_vertical(h)).collect();
    }
    img = img.permute_channels(plan.channel_perm);

    let mut draws = DrawLog::default();
    let mut inner = rng.derive(KEY_TRANSFORM);
    let img = transform(plan.kind, plan.strength, &img, params, &mut inner, &mut draws)?;

    let log = AugmentationLog {
        flipped_h: plan.flip_h,
        flipped_v: plan.flip_v,
        channel_perm: plan.channel_perm,
        chosen: plan.kind,
        strength: plan.strength,
        inner_draws: draws.0,
    };
    Ok((img, out_boxes, log))
}

/// Draws and applies one augmentation. Boxes follow the flips; no pool transform
/// moves or drops them (cutout keeps occluded annotations).
pub fn augment(
    image: &Rgb8Image,
    boxes: &[Annotation],
    policy: &PolicyConfig,
    rng: &RandomStream,
) -> Result<(Rgb8Image, Vec<Annotation>, AugmentationLog), AugmentError> {
    let plan = plan_augmentation(policy, rng)?;
    apply_plan(image, boxes, &plan, &policy.params, rng)
}

/// Applies one pool transform with default magnitudes.
pub fn apply_transform(
    kind: TransformKind,
    strength: f64,
    image: &Rgb8Image,
    rng: &RandomStream,
) -> Result<Rgb8Image, AugmentError> {
    apply_transform_with(kind, strength, image, &TransformParams::default(), rng)
}

pub fn apply_transform_with(
    kind: TransformKind,
    strength: f64,
    image: &Rgb8Image,
    params: &TransformParams,
    rng: &RandomStream,
) -> Result<Rgb8Image, AugmentError> {
    let mut stream = rng.clone();
    transform(kind, strength, image, params, &mut stream, &mut DrawLog::default())
}

fn transform(
    kind: TransformKind,
    strength: f64,
    image: &Rgb8Image,
    p: &TransformParams,
    rng: &mut RandomStream,
    draws: &mut DrawLog,
) -> Result<Rgb8Image, AugmentError> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(AugmentError::OutOfRange {
            field: "strength",
            value: strength,
            range: "[0, 1]",
        });
    }
    if strength == 0.0 {
        return Ok(image.clone());
    }
    let s = strength;
    use TransformKind as K;
    let out = match kind {
        K::ColorJitter => photometric::color_jitter(image, s * p.color_jitter_range, rng, draws),
        K::HeStain => {
            let sigma = s * p.he_sigma;
            stain::he_stain_logged(image, sigma, sigma, &StainBasis::ruifrok_johnston(), rng, draws)?
        }
        K::FancyPca => pca::fancy_pca_logged(image, s * p.fancy_pca_sigma, rng, draws),
        K::Hue => photometric::hue_shift(image, s * p.hue_max_degrees, rng, draws),
        K::Saturation => photometric::saturation(image, s * p.saturation_range, rng, draws),
        K::Equalize => photometric::equalize(image, s),
        K::RandomContrast => photometric::random_contrast(image, s * p.contrast_range, rng, draws),
        K::AutoContrast => photometric::auto_contrast(image, s),
        K::Clahe => filters::clahe(image, p.clahe_clip_base + p.clahe_clip_gain * s, p.clahe_tiles),
        K::Solarize => photometric::solarize(image, 256.0 * (1.0 - s)),
        K::SolarizeAdd => photometric::solarize_add(image, (p.solarize_add_max * s).round() as i32),
        K::Sharpness => filters::sharpness(image, 1.0 + p.sharpness_gain * s),
        K::GaussianBlur => filters::gaussian_blur(image, p.blur_max_sigma * s),
        K::Posterize => {
            let bits = 8 - (p.posterize_max_bits_removed * s).round().clamp(0.0, 7.0) as u32;
            photometric::posterize(image, bits)
        }
        K::Cutout => noise::cutout(image, p.cutout_max_fraction * s, p.cutout_fill, rng, draws),
        K::IsoNoise => noise::iso_noise(image, p.iso_intensity * s, p.iso_color_shift * s, rng, draws),
        K::JpegArtifacts => {
            let quality = (100.0 - p.jpeg_quality_drop * s).round().clamp(1.0, 100.0) as u8;
            draws.record("quality", quality as f64);
            noise::jpeg_roundtrip(image, quality)
        }
        K::PixelwiseChannelShuffle => noise::pixelwise_channel_shuffle(image, s, rng, draws),
        K::GaussianNoise => noise::gaussian_noise(image, p.noise_max_sigma * s, rng),
    };
    Ok(out)
}

#[inline]
pub(crate) fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
