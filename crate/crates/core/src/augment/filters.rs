//! Neighbourhood filters: Gaussian blur, sharpness and CLAHE.

use super::to_byte;
use crate::image::Rgb8Image;

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn mirror(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)` and mirrored borders.
pub(crate) fn gaussian_blur(image: &Rgb8Image, sigma: f64) -> Rgb8Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let src = image.as_raw();

    let mut horizontal = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, weight) in kernel.iter().enumerate() {
                let sx = mirror(x + k as i64 - radius, w);
                let o = ((y * w) as usize + sx) * 3;
                for c in 0..3 {
                    acc[c] += weight * src[o + c] as f64;
                }
            }
            let o = ((y * w + x) * 3) as usize;
            horizontal[o..o + 3].copy_from_slice(&acc);
        }
    }

    let mut out = image.clone();
    let dst = out.as_raw_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, weight) in kernel.iter().enumerate() {
                let sy = mirror(y + k as i64 - radius, h);
                let o = (sy * w as usize + x as usize) * 3;
                for c in 0..3 {
                    acc[c] += weight * horizontal[o + c];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                dst[o + c] = to_byte(acc[c]);
            }
        }
    }
    out
}

/// Blends the image with its 3x3 smoothed version: `smooth + factor * (orig - smooth)`.
/// The smoothing kernel is `[1 1 1; 1 5 1; 1 1 1] / 13`; border pixels are left as is.
pub(crate) fn sharpness(image: &Rgb8Image, factor: f64) -> Rgb8Image {
    let (w, h) = image.dimensions();
    if w < 3 || h < 3 {
        return image.clone();
    }
    let mut out = image.clone();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut smooth = [0.0; 3];
            for dy in 0..3 {
                for dx in 0..3 {
                    let weight = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                    let p = image.get(x + dx - 1, y + dy - 1);
                    for c in 0..3 {
                        smooth[c] += weight * p[c] as f64;
                    }
                }
            }
            let orig = image.get(x, y);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let s = (smooth[c] / 13.0).round();
                px[c] = to_byte(s + factor * (orig[c] as f64 - s));
            }
            out.put(x, y, px);
        }
    }
    out
}

/// Contrast-limited adaptive histogram equalization of a single 8-bit plane.
///
/// The plane is split into `tiles x tiles` regions (fewer when the plane is smaller);
/// each region's histogram is clipped at `clip_limit * area / 256` with the excess
/// spread evenly, and pixels bilinearly interpolate the four nearest region mappings.
pub(crate) fn clahe_plane(plane: &[u8], width: u32, height: u32, clip_limit: f64, tiles: u32) -> Vec<u8> {
    let tx = tiles.clamp(1, width) as usize;
    let ty = tiles.clamp(1, height) as usize;
    let (w, h) = (width as usize, height as usize);
    let x_edges: Vec<usize> = (0..=tx).map(|i| i * w / tx).collect();
    let y_edges: Vec<usize> = (0..=ty).map(|j| j * h / ty).collect();

    let mut luts = vec![[0f64; 256]; tx * ty];
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = [0u64; 256];
            for y in y_edges[j]..y_edges[j + 1] {
                for x in x_edges[i]..x_edges[i + 1] {
                    hist[plane[y * w + x] as usize] += 1;
                }
            }
            let area = ((x_edges[i + 1] - x_edges[i]) * (y_edges[j + 1] - y_edges[j])) as u64;
            let limit = ((clip_limit * area as f64 / 256.0) as u64).max(1);
            let mut excess = 0u64;
            for bin in hist.iter_mut() {
                if *bin > limit {
                    excess += *bin - limit;
                    *bin = limit;
                }
            }
            let (share, remainder) = (excess / 256, (excess % 256) as usize);
            for (b, bin) in hist.iter_mut().enumerate() {
                *bin += share + u64::from(b < remainder);
            }
            let lut = &mut luts[j * tx + i];
            let mut cdf = 0u64;
            for b in 0..256 {
                cdf += hist[b];
                lut[b] = cdf as f64 * 255.0 / area as f64;
            }
        }
    }

    let tile_w = w as f64 / tx as f64;
    let tile_h = h as f64 / ty as f64;
    let locate = |pos: usize, size: f64, count: usize| -> (usize, usize, f64) {
        let f = (pos as f64 + 0.5) / size - 0.5;
        if f <= 0.0 {
            return (0, 0, 0.0);
        }
        let lo = (f.floor() as usize).min(count - 1);
        let hi = (lo + 1).min(count - 1);
        (lo, hi, (f - lo as f64).clamp(0.0, 1.0))
    };

    let mut out = vec![0u8; plane.len()];
    for y in 0..h {
        let (j0, j1, ay) = locate(y, tile_h, ty);
        for x in 0..w {
            let (i0, i1, ax) = locate(x, tile_w, tx);
            let v = plane[y * w + x] as usize;
            let top = luts[j0 * tx + i0][v] * (1.0 - ax) + luts[j0 * tx + i1][v] * ax;
            let bottom = luts[j1 * tx + i0][v] * (1.0 - ax) + luts[j1 * tx + i1][v] * ax;
            out[y * w + x] = to_byte(top * (1.0 - ay) + bottom * ay);
        }
    }
    out
}

/// CLAHE on the HSV value plane; RGB channels are rescaled by the new/old value ratio.
pub(crate) fn clahe(image: &Rgb8Image, clip_limit: f64, tiles: u32) -> Rgb8Image {
    let value: Vec<u8> = image.pixels().map(|p| p[0].max(p[1]).max(p[2])).collect();
    let equalized = clahe_plane(&value, image.width(), image.height(), clip_limit, tiles);
    let mut out = image.clone();
    for ((px, &old), &new) in out.pixels_mut().zip(&value).zip(&equalized) {
        if old == 0 {
            px.fill(new);
        } else {
            let ratio = new as f64 / old as f64;
            for c in px.iter_mut() {
                *c = to_byte(*c as f64 * ratio);
            }
        }
    }
    out
}
