//! Point-wise colour and tone transforms.

use super::color::{hsv_to_rgb, rgb_to_hsv};
use super::{to_byte, DrawLog};
use crate::image::Rgb8Image;
use crate::rng::RandomStream;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luma(p: [f64; 3]) -> f64 {
    LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
}

fn map_pixels(image: &Rgb8Image, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Rgb8Image {
    let mut out = image.clone();
    for px in out.pixels_mut() {
        let v = f([px[0] as f64, px[1] as f64, px[2] as f64]);
        px[0] = to_byte(v[0]);
        px[1] = to_byte(v[1]);
        px[2] = to_byte(v[2]);
    }
    out
}

fn apply_luts(image: &Rgb8Image, luts: &[[u8; 256]; 3]) -> Rgb8Image {
    let mut out = image.clone();
    for px in out.pixels_mut() {
        for c in 0..3 {
            px[c] = luts[c][px[c] as usize];
        }
    }
    out
}

/// Brightness, then contrast around the mean luma, then saturation against per-pixel luma.
pub(crate) fn color_jitter(image: &Rgb8Image, range: f64, rng: &mut RandomStream, draws: &mut DrawLog) -> Rgb8Image {
    let b = draws.record("brightness", rng.uniform(1.0 - range, 1.0 + range));
    let c = draws.record("contrast", rng.uniform(1.0 - range, 1.0 + range));
    let s = draws.record("saturation", rng.uniform(1.0 - range, 1.0 + range));
    let n = image.pixel_count() as f64;
    let mean_luma = image
        .pixels()
        .map(|p| luma([p[0] as f64, p[1] as f64, p[2] as f64]) * b)
        .sum::<f64>()
        / n;
    map_pixels(image, |p| {
        let bright = p.map(|v| v * b);
        let contrasted = bright.map(|v| mean_luma + c * (v - mean_luma));
        let gray = luma(contrasted);
        contrasted.map(|v| gray + s * (v - gray))
    })
}

pub(crate) fn hue_shift(image: &Rgb8Image, max_degrees: f64, rng: &mut RandomStream, draws: &mut DrawLog) -> Rgb8Image {
    let shift = draws.record("hue_degrees", rng.uniform(-max_degrees, max_degrees));
    map_pixels(image, |p| {
        let (h, s, v) = rgb_to_hsv(p[0] / 255.0, p[1] / 255.0, p[2] / 255.0);
        let (r, g, b) = hsv_to_rgb(h + shift, s, v);
        [r * 255.0, g * 255.0, b * 255.0]
    })
}

/// Scales HSV saturation by a factor drawn from `U(1 - range, 1 + range)`.
pub(crate) fn saturation(image: &Rgb8Image, range: f64, rng: &mut RandomStream, draws: &mut DrawLog) -> Rgb8Image {
    let factor = draws.record("saturation_factor", rng.uniform(1.0 - range, 1.0 + range));
    map_pixels(image, |p| {
        let (h, s, v) = rgb_to_hsv(p[0] / 255.0, p[1] / 255.0, p[2] / 255.0);
        let (r, g, b) = hsv_to_rgb(h, (s * factor).clamp(0.0, 1.0), v);
        [r * 255.0, g * 255.0, b * 255.0]
    })
}

fn channel_histograms(image: &Rgb8Image) -> [[u64; 256]; 3] {
    let mut hist = [[0u64; 256]; 3];
    for p in image.pixels() {
        for c in 0..3 {
            hist[c][p[c] as usize] += 1;
        }
    }
    hist
}

/// Per-channel histogram equalization LUT. A histogram with a single occupied bin
/// yields the identity table.
pub(crate) fn equalize_lut(hist: &[u64; 256]) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = i as u8;
    }
    let total: u64 = hist.iter().sum();
    let last = hist.iter().rposition(|&c| c > 0).map_or(0, |i| hist[i]);
    let step = (total - last) / 255;
    if step == 0 {
        return lut;
    }
    let mut n = step / 2;
    for (i, v) in lut.iter_mut().enumerate() {
        *v = (n / step).min(255) as u8;
        n += hist[i];
    }
    lut
}

fn blend_luts(luts: [[u8; 256]; 3], amount: f64) -> [[u8; 256]; 3] {
    let mut out = [[0u8; 256]; 3];
    for c in 0..3 {
        for i in 0..256 {
            out[c][i] = to_byte((1.0 - amount) * i as f64 + amount * luts[c][i] as f64);
        }
    }
    out
}

/// Histogram equalization blended with the original by `amount`.
pub(crate) fn equalize(image: &Rgb8Image, amount: f64) -> Rgb8Image {
    let hist = channel_histograms(image);
    let luts = [equalize_lut(&hist[0]), equalize_lut(&hist[1]), equalize_lut(&hist[2])];
    apply_luts(image, &blend_luts(luts, amount))
}

/// Scales each channel around its own mean.
pub(crate) fn random_contrast(image: &Rgb8Image, range: f64, rng: &mut RandomStream, draws: &mut DrawLog) -> Rgb8Image {
    let factor = draws.record("contrast_factor", rng.uniform(1.0 - range, 1.0 + range));
    let n = image.pixel_count() as f64;
    let mut mean = [0.0; 3];
    for p in image.pixels() {
        for c in 0..3 {
            mean[c] += p[c] as f64;
        }
    }
    let mean = mean.map(|m| m / n);
    map_pixels(image, |p| {
        [
            mean[0] + factor * (p[0] - mean[0]),
            mean[1] + factor * (p[1] - mean[1]),
            mean[2] + factor * (p[2] - mean[2]),
        ]
    })
}

/// Per-channel min/max stretch to the full byte range, blended by `amount`.
pub(crate) fn auto_contrast(image: &Rgb8Image, amount: f64) -> Rgb8Image {
    let hist = channel_histograms(image);
    let mut luts = [[0u8; 256]; 3];
    for c in 0..3 {
        let lo = hist[c].iter().position(|&n| n > 0).unwrap_or(0);
        let hi = hist[c].iter().rposition(|&n| n > 0).unwrap_or(255);
        for (i, v) in luts[c].iter_mut().enumerate() {
            *v = if hi > lo {
                to_byte((i as f64 - lo as f64) * 255.0 / (hi - lo) as f64)
            } else {
                i as u8
            };
        }
    }
    apply_luts(image, &blend_luts(luts, amount))
}

/// Inverts every channel value at or above `threshold`.
pub(crate) fn solarize(image: &Rgb8Image, threshold: f64) -> Rgb8Image {
    let mut out = image.clone();
    for v in out.as_raw_mut() {
        if *v as f64 >= threshold {
            *v = 255 - *v;
        }
    }
    out
}

/// Adds `addition` to channel values below 128, saturating at 255.
pub(crate) fn solarize_add(image: &Rgb8Image, addition: i32) -> Rgb8Image {
    let mut out = image.clone();
    for v in out.as_raw_mut() {
        if *v < 128 {
            *v = (*v as i32 + addition).clamp(0, 255) as u8;
        }
    }
    out
}

/// Keeps the `bits` most significant bits of each channel.
pub(crate) fn posterize(image: &Rgb8Image, bits: u32) -> Rgb8Image {
    let mask = (0xFFu32 << (8 - bits.clamp(1, 8))) as u8;
    let mut out = image.clone();
    for v in out.as_raw_mut() {
        *v &= mask;
    }
    out
}
