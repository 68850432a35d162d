//! Optical-density stain augmentation for H&E images.
//!
//! Pixels are mapped to optical density, deconvolved into stain concentrations with the
//! inverse stain basis, perturbed per stain as `alpha * S + beta`, and recomposed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DrawLog;
use crate::image::Rgb8Image;
use crate::rng::RandomStream;

#[derive(Debug, Error, PartialEq)]
pub enum StainError {
    #[error("stain basis is singular (|det| = {0:e})")]
    SingularBasis(f64),
    #[error("stain vector {0} has zero length")]
    ZeroVector(usize),
}

const MIN_DET: f64 = 1e-6;

/// `-log10((v + 1) / 256)`, in `[0, log10(256)]`.
pub fn rgb_to_od(pixel: [u8; 3]) -> [f64; 3] {
    pixel.map(|v| -((v as f64 + 1.0) / 256.0).log10())
}

/// Inverse of [`rgb_to_od`] with rounding and clamping to the byte range.
pub fn od_to_rgb(od: [f64; 3]) -> [u8; 3] {
    od.map(|d| (256.0 * 10f64.powf(-d) - 1.0).round().clamp(0.0, 255.0) as u8)
}

/// Rows are unit optical-density vectors for hematoxylin, eosin and the residual channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StainBasis {
    rows: [[f64; 3]; 3],
}

fn normalize(v: [f64; 3], index: usize) -> Result<[f64; 3], StainError> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        return Err(StainError::ZeroVector(index));
    }
    Ok(v.map(|c| c / n))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let d = det3(m);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // cofactor of m[j][i]
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / d;
        }
    }
    inv
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn row_times(v: [f64; 3], m: &[[f64; 3]; 3]) -> [f64; 3] {
    [
        v[0] * m[0][0] + v[1] * m[1][0] + v[2] * m[2][0],
        v[0] * m[0][1] + v[1] * m[1][1] + v[2] * m[2][1],
        v[0] * m[0][2] + v[1] * m[1][2] + v[2] * m[2][2],
    ]
}

impl StainBasis {
    /// Normalizes the three rows and checks invertibility.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self, StainError> {
        let rows = [normalize(rows[0], 0)?, normalize(rows[1], 1)?, normalize(rows[2], 2)?];
        let det = det3(&rows);
        if det.abs() <= MIN_DET {
            return Err(StainError::SingularBasis(det.abs()));
        }
        Ok(StainBasis { rows })
    }

    /// Two stain vectors; the residual row is their normalized cross product.
    pub fn from_stains(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Result<Self, StainError> {
        let h = normalize(hematoxylin, 0)?;
        let e = normalize(eosin, 1)?;
        StainBasis::new([h, e, cross(h, e)])
    }

    /// Ruifrok & Johnston H&E vectors.
    pub fn ruifrok_johnston() -> Self {
        StainBasis::from_stains([0.650, 0.704, 0.286], [0.072, 0.990, 0.105]).expect("reference basis is invertible")
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.rows)
    }

    pub fn inverse(&self) -> [[f64; 3]; 3] {
        inverse3(&self.rows)
    }
}

/// Applies fixed per-stain scale `alpha` and shift `beta` (H, E, residual order).
pub fn he_stain_perturb(
    image: &Rgb8Image,
    basis: &StainBasis,
    alpha: [f64; 3],
    beta: [f64; 3],
) -> Result<Rgb8Image, StainError> {
    let det = basis.determinant();
    if det.abs() <= MIN_DET {
        return Err(StainError::SingularBasis(det.abs()));
    }
    // OD' = (OD * B^-1 * diag(alpha) + beta) * B
    let mut scaled_inv = basis.inverse();
    for row in scaled_inv.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= alpha[j];
        }
    }
    let transform = mat_mul(&scaled_inv, &basis.rows);
    let offset = row_times(beta, &basis.rows);
    let od_table: Vec<f64> = (0..=255u8).map(|v| rgb_to_od([v, 0, 0])[0]).collect();

    let mut out = image.clone();
    for px in out.pixels_mut() {
        let od = [
            od_table[px[0] as usize],
            od_table[px[1] as usize],
            od_table[px[2] as usize],
        ];
        let mapped = row_times(od, &transform);
        let rgb = od_to_rgb([mapped[0] + offset[0], mapped[1] + offset[1], mapped[2] + offset[2]]);
        px.copy_from_slice(&rgb);
    }
    Ok(out)
}

pub(crate) fn he_stain_logged(
    image: &Rgb8Image,
    sigma_alpha: f64,
    sigma_beta: f64,
    basis: &StainBasis,
    rng: &mut RandomStream,
    draws: &mut DrawLog,
) -> Result<Rgb8Image, StainError> {
    const NAMES: [&str; 3] = ["h", "e", "residual"];
    let mut alpha = [1.0; 3];
    let mut beta = [0.0; 3];
    for (i, a) in alpha.iter_mut().enumerate() {
        *a = draws.record(
            &format!("alpha_{}", NAMES[i]),
            rng.uniform(1.0 - sigma_alpha, 1.0 + sigma_alpha),
        );
    }
    for (i, b) in beta.iter_mut().enumerate() {
        *b = draws.record(&format!("beta_{}", NAMES[i]), rng.uniform(-sigma_beta, sigma_beta));
    }
    he_stain_perturb(image, basis, alpha, beta)
}

/// Draws `alpha_i ~ U(1 - sigma_alpha, 1 + sigma_alpha)` and `beta_i ~ U(-sigma_beta, sigma_beta)`
/// once per image for each stain, then perturbs.
pub fn he_stain_augment(
    image: &Rgb8Image,
    sigma_alpha: f64,
    sigma_beta: f64,
    basis: &StainBasis,
    rng: &RandomStream,
) -> Result<Rgb8Image, StainError> {
    let mut stream = rng.clone();
    he_stain_logged(
        image,
        sigma_alpha,
        sigma_beta,
        basis,
        &mut stream,
        &mut DrawLog::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn od_endpoints() {
        assert_eq!(rgb_to_od([255, 255, 255]), [0.0, 0.0, 0.0]);
        let black = rgb_to_od([0, 0, 0]);
        assert!((black[0] - 256f64.log10()).abs() < 1e-12);
        assert!((black[0] - 2.408).abs() < 1e-3);
    }

    #[test]
    fn od_roundtrip_every_byte() {
        for v in 0..=255u8 {
            assert_eq!(od_to_rgb(rgb_to_od([v, v, 255 - v])), [v, v, 255 - v]);
        }
    }

    #[test]
    fn reference_basis_is_unit_and_invertible() {
        let basis = StainBasis::ruifrok_johnston();
        for row in basis.rows() {
            let n = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!(basis.determinant().abs() > 1e-6);
        let id = mat_mul(&basis.inverse(), basis.rows());
        for (i, row) in id.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_basis_rejected() {
        let err = StainBasis::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, StainError::SingularBasis(_)));
        assert_eq!(
            StainBasis::from_stains([0.0; 3], [1.0, 0.0, 0.0]).unwrap_err(),
            StainError::ZeroVector(0)
        );
    }

    #[test]
    fn white_is_a_fixed_point() {
        let img = Rgb8Image::filled(3, 3, [255, 255, 255]);
        let out = he_stain_perturb(&img, &StainBasis::ruifrok_johnston(), [1.4, 0.6, 1.2], [0.0; 3]).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn zero_sigma_is_near_identity() {
        let img = Rgb8Image::from_fn(32, 32, |x, y| [(x * 8) as u8, (y * 8) as u8, (x * y) as u8]);
        let out = he_stain_augment(&img, 0.0, 0.0, &StainBasis::ruifrok_johnston(), &RandomStream::new(1)).unwrap();
        for (a, b) in out.as_raw().iter().zip(img.as_raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 2);
        }
    }
}
