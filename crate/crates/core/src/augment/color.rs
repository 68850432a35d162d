//! HSV and HLS conversions on unit-range channels; hue in degrees `[0, 360)`.

pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = hue_of(r, g, b, max, delta);
    let s = if max > 0.0 { delta / max } else { 0.0 };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let (r1, g1, b1) = hue_sector(h, c);
    let m = v - c;
    (r1 + m, g1 + m, b1 + m)
}

pub(crate) fn rgb_to_hls(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let l = (max + min) / 2.0;
    let s = if delta == 0.0 {
        0.0
    } else {
        delta / (1.0 - (2.0 * l - 1.0).abs())
    };
    (hue_of(r, g, b, max, delta), l, s)
}

pub(crate) fn hls_to_rgb(h: f64, l: f64, s: f64) -> (f64, f64, f64) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let (r1, g1, b1) = hue_sector(h, c);
    let m = l - c / 2.0;
    (r1 + m, g1 + m, b1 + m)
}

pub(crate) fn wrap_degrees(h: f64) -> f64 {
    let w = h.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

fn hue_of(r: f64, g: f64, b: f64, max: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    wrap_degrees(h)
}

fn hue_sector(h: f64, c: f64) -> (f64, f64, f64) {
    let hp = wrap_degrees(h) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_on_byte_grid() {
        for r in (0..=255).step_by(17) {
            for g in (0..=255).step_by(15) {
                for b in (0..=255).step_by(51) {
                    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
                    let (h, s, v) = rgb_to_hsv(r, g, b);
                    let (r2, g2, b2) = hsv_to_rgb(h, s, v);
                    assert!((r - r2).abs() < 1e-9 && (g - g2).abs() < 1e-9 && (b - b2).abs() < 1e-9);
                    let (h, l, s) = rgb_to_hls(r, g, b);
                    let (r3, g3, b3) = hls_to_rgb(h, l, s);
                    assert!((r - r3).abs() < 1e-9 && (g - g3).abs() < 1e-9 && (b - b3).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn primary_hues() {
        assert_eq!(rgb_to_hsv(1.0, 0.0, 0.0).0, 0.0);
        assert_eq!(rgb_to_hsv(0.0, 1.0, 0.0).0, 120.0);
        assert_eq!(rgb_to_hsv(0.0, 0.0, 1.0).0, 240.0);
        assert_eq!(wrap_degrees(-30.0), 330.0);
    }
}
