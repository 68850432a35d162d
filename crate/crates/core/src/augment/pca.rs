//! Fancy PCA colour augmentation.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{to_byte, DrawLog};
use crate::image::Rgb8Image;
use crate::rng::RandomStream;

/// Eigen-decomposition of the RGB covariance (values scaled to `[0, 1]`), eigenvalues
/// sorted descending. Each eigenvector is signed so its largest-magnitude component is
/// positive; negative eigenvalues from round-off are clamped to zero.
pub(crate) fn color_eigen(image: &Rgb8Image) -> ([f64; 3], [[f64; 3]; 3]) {
    let n = image.pixel_count() as f64;
    let mut mean = [0.0; 3];
    for p in image.pixels() {
        for c in 0..3 {
            mean[c] += p[c] as f64 / 255.0;
        }
    }
    let mean = mean.map(|m| m / n);
    let mut cov = Matrix3::<f64>::zeros();
    for p in image.pixels() {
        let d = Vector3::new(
            p[0] as f64 / 255.0 - mean[0],
            p[1] as f64 / 255.0 - mean[1],
            p[2] as f64 / 255.0 - mean[2],
        );
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = [0.0; 3];
    let mut vectors = [[0.0; 3]; 3];
    for (k, &i) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[i].max(0.0);
        let col = eig.eigenvectors.column(i);
        let mut v = [col[0], col[1], col[2]];
        let lead = (0..3)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap();
        if v[lead] < 0.0 {
            v = v.map(|x| -x);
        }
        vectors[k] = v;
    }
    (values, vectors)
}

/// Adds `sum_k a_k * lambda_k * e_k` (in unit scale) to every pixel with explicit weights `a`.
pub fn fancy_pca_with(image: &Rgb8Image, a: [f64; 3]) -> Rgb8Image {
    let (values, vectors) = color_eigen(image);
    let mut shift = [0.0; 3];
    for k in 0..3 {
        for c in 0..3 {
            shift[c] += a[k] * values[k] * vectors[k][c];
        }
    }
    if shift == [0.0; 3] {
        return image.clone();
    }
    let mut out = image.clone();
    for px in out.pixels_mut() {
        for c in 0..3 {
            px[c] = to_byte((px[c] as f64 / 255.0 + shift[c]) * 255.0);
        }
    }
    out
}

pub(crate) fn fancy_pca_logged(
    image: &Rgb8Image,
    sigma: f64,
    rng: &mut RandomStream,
    draws: &mut DrawLog,
) -> Rgb8Image {
    let a = [
        draws.record("a1", sigma * rng.normal()),
        draws.record("a2", sigma * rng.normal()),
        draws.record("a3", sigma * rng.normal()),
    ];
    fancy_pca_with(image, a)
}

/// Draws `a_k ~ N(0, sigma)` once per image for the three principal components.
pub fn fancy_pca(image: &Rgb8Image, sigma: f64, rng: &RandomStream) -> Rgb8Image {
    let mut stream = rng.clone();
    fancy_pca_logged(image, sigma, &mut stream, &mut DrawLog::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_untouched() {
        let img = Rgb8Image::filled(10, 10, [30, 60, 90]);
        assert_eq!(fancy_pca_with(&img, [5.0, -3.0, 1.0]), img);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = Rgb8Image::from_fn(8, 8, |x, y| [(x * 30) as u8, (y * 30) as u8, 5]);
        assert_eq!(fancy_pca(&img, 0.0, &RandomStream::new(1)), img);
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        let img = Rgb8Image::from_fn(20, 20, |x, y| [(x * 12) as u8, (y * 9) as u8, ((x + y) * 5) as u8]);
        let (values, vecs) = color_eigen(&img);
        assert!(values[0] >= values[1] && values[1] >= values[2]);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|c| vecs[i][c] * vecs[j][c]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }
}
