//! Stochastic pixel noise, occlusion and codec artefacts.

use super::color::{hls_to_rgb, rgb_to_hls, wrap_degrees};
use super::{to_byte, DrawLog, CHANNEL_PERMUTATIONS};
use crate::image::Rgb8Image;
use crate::rng::RandomStream;

/// Independent `N(0, sigma)` noise per channel sample, drawn in raster order (r, g, b).
pub(crate) fn gaussian_noise(image: &Rgb8Image, sigma: f64, rng: &mut RandomStream) -> Rgb8Image {
    let mut out = image.clone();
    for v in out.as_raw_mut() {
        *v = to_byte(*v as f64 + sigma * rng.normal());
    }
    out
}

/// Grey square of side `round(fraction * min(w, h))` at a uniform position inside the image.
pub(crate) fn cutout(
    image: &Rgb8Image,
    fraction: f64,
    fill: u8,
    rng: &mut RandomStream,
    draws: &mut DrawLog,
) -> Rgb8Image {
    let (w, h) = image.dimensions();
    let side = (fraction * w.min(h) as f64).round() as u32;
    draws.record("side", side as f64);
    if side == 0 {
        return image.clone();
    }
    let x = draws.record("x", rng.int_inclusive(0, (w - side) as i64) as f64) as u32;
    let y = draws.record("y", rng.int_inclusive(0, (h - side) as i64) as f64) as u32;
    let mut out = image.clone();
    for yy in y..y + side {
        for xx in x..x + side {
            out.put(xx, yy, [fill; 3]);
        }
    }
    out
}

/// Camera-sensor noise: Poisson luminance noise scaled by the image's lightness spread,
/// plus Gaussian hue jitter of `color_shift * 360` degrees.
pub(crate) fn iso_noise(
    image: &Rgb8Image,
    intensity: f64,
    color_shift: f64,
    rng: &mut RandomStream,
    draws: &mut DrawLog,
) -> Rgb8Image {
    let hls: Vec<(f64, f64, f64)> = image
        .pixels()
        .map(|p| rgb_to_hls(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0))
        .collect();
    let n = hls.len() as f64;
    let mean_l = hls.iter().map(|t| t.1).sum::<f64>() / n;
    let std_l = (hls.iter().map(|t| (t.1 - mean_l).powi(2)).sum::<f64>() / n).sqrt();
    let lambda = draws.record("luminance_lambda", std_l * intensity * 255.0);
    let hue_sigma = draws.record("hue_sigma_degrees", color_shift * 360.0);

    let mut out = image.clone();
    for (px, &(h, l, s)) in out.pixels_mut().zip(&hls) {
        let lum_noise = rng.poisson(lambda);
        let hue_noise = hue_sigma * rng.normal();
        let l2 = (l + lum_noise / 255.0 * (1.0 - l)).clamp(0.0, 1.0);
        let (r, g, b) = hls_to_rgb(wrap_degrees(h + hue_noise), l2, s);
        px[0] = to_byte(r * 255.0);
        px[1] = to_byte(g * 255.0);
        px[2] = to_byte(b * 255.0);
    }
    out
}

/// Each pixel independently, with probability `prob`, gets one of the six channel orders.
pub(crate) fn pixelwise_channel_shuffle(
    image: &Rgb8Image,
    prob: f64,
    rng: &mut RandomStream,
    draws: &mut DrawLog,
) -> Rgb8Image {
    let mut out = image.clone();
    let mut shuffled = 0usize;
    for px in out.pixels_mut() {
        if rng.bernoulli(prob) {
            let perm = CHANNEL_PERMUTATIONS[rng.below(6) as usize];
            let src = [px[0], px[1], px[2]];
            px[0] = src[perm[0]];
            px[1] = src[perm[1]];
            px[2] = src[perm[2]];
            shuffled += 1;
        }
    }
    draws.record("shuffled_pixels", shuffled as f64);
    out
}

/// Baseline JPEG encode at `quality`, then decode.
pub(crate) fn jpeg_roundtrip(image: &Rgb8Image, quality: u8) -> Rgb8Image {
    use image::codecs::jpeg::JpegEncoder;
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(
            image.as_raw(),
            image.width(),
            image.height(),
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory JPEG encoding of a valid RGB buffer");
    let decoded =
        image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg).expect("decoding a JPEG we just encoded");
    Rgb8Image::from_dynamic(decoded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured() -> Rgb8Image {
        Rgb8Image::from_fn(64, 48, |x, y| [(x * 4) as u8, (y * 5) as u8, ((x + y) * 2) as u8])
    }

    #[test]
    fn cutout_fills_square() {
        let img = textured();
        let mut draws = DrawLog::default();
        let out = cutout(&img, 0.4, 128, &mut RandomStream::new(2), &mut draws);
        let side = draws.0[0].value as u32;
        assert_eq!(side, 19);
        let (x, y) = (draws.0[1].value as u32, draws.0[2].value as u32);
        assert!(x + side <= 64 && y + side <= 48);
        assert_eq!(out.get(x, y), [128; 3]);
        assert_eq!(out.get(x + side - 1, y + side - 1), [128; 3]);
        let changed = out.pixels().zip(img.pixels()).filter(|(a, b)| a != b).count();
        assert!(changed <= (side * side) as usize);
    }

    #[test]
    fn jpeg_keeps_dimensions_and_is_deterministic() {
        let img = textured();
        let a = jpeg_roundtrip(&img, 40);
        assert_eq!(a.dimensions(), img.dimensions());
        assert_eq!(a, jpeg_roundtrip(&img, 40));
        assert_ne!(a, img);
    }

    #[test]
    fn full_probability_shuffle_keeps_channel_multiset() {
        let img = textured();
        let mut draws = DrawLog::default();
        let out = pixelwise_channel_shuffle(&img, 1.0, &mut RandomStream::new(4), &mut draws);
        for (a, b) in out.pixels().zip(img.pixels()) {
            let (mut a, mut b) = (a.to_vec(), b.to_vec());
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
        assert_eq!(draws.0[0].value, 64.0 * 48.0);
    }

    #[test]
    fn iso_noise_never_darkens_constant_gray() {
        let img = Rgb8Image::filled(16, 16, [120, 120, 120]);
        // zero lightness spread means no luminance noise; gray has no hue to rotate
        let out = iso_noise(&img, 0.5, 0.04, &mut RandomStream::new(3), &mut DrawLog::default());
        assert_eq!(out, img);
    }
}
