//! Owned 8-bit RGB rasters and the geometric primitives shared by every module.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("buffer holds {actual} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("crop window origin ({x},{y}) size {w}x{h} exceeds {width}x{height} image")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("{path}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major interleaved RGB raster, `data.len() == 3 * width * height`.
#[derive(Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Rgb8Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Rgb8Image({}x{})", self.width, self.height)
    }
}

impl Rgb8Image {
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(Rgb8Image { width, height, data })
    }

    /// Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Rgb8Image { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Rgb8Image { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(3)
    }

    pub fn pixels_mut(&mut self) -> impl Iterator<Item = &mut [u8]> {
        self.data.chunks_exact_mut(3)
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Sub-window with top-left `origin` and `size`; output `(i, j)` is input `(x+i, y+j)`.
    pub fn crop(&self, origin: (u32, u32), size: (u32, u32)) -> Result<Rgb8Image, ImageError> {
        let (x, y) = origin;
        let (w, h) = size;
        let fits = w > 0
            && h > 0
            && x.checked_add(w).is_some_and(|r| r <= self.width)
            && y.checked_add(h).is_some_and(|b| b <= self.height);
        if !fits {
            return Err(ImageError::OutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = self.offset(x, row);
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Ok(Rgb8Image {
            width: w,
            height: h,
            data,
        })
    }

    pub fn flip_horizontal(&self) -> Rgb8Image {
        let mut out = self.clone();
        let row_len = self.width as usize * 3;
        for row in out.data.chunks_exact_mut(row_len) {
            let w = self.width as usize;
            for i in 0..w / 2 {
                let (a, b) = (i * 3, (w - 1 - i) * 3);
                for c in 0..3 {
                    row.swap(a + c, b + c);
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Rgb8Image {
        let row_len = self.width as usize * 3;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(row_len).rev() {
            data.extend_from_slice(row);
        }
        Rgb8Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Output channel `c` takes input channel `perm[c]`.
    pub fn permute_channels(&self, perm: [usize; 3]) -> Rgb8Image {
        let mut out = self.clone();
        if perm == [0, 1, 2] {
            return out;
        }
        for (dst, src) in out.data.chunks_exact_mut(3).zip(self.data.chunks_exact(3)) {
            dst[0] = src[perm[0]];
            dst[1] = src[perm[1]];
            dst[2] = src[perm[2]];
        }
        out
    }

    /// Pads right and bottom edges by mirror reflection (without repeating the edge pixel)
    /// until the image is at least `min_w x min_h`.
    pub fn pad_reflect(&self, min_w: u32, min_h: u32) -> Rgb8Image {
        let w = self.width.max(min_w);
        let h = self.height.max(min_h);
        if (w, h) == self.dimensions() {
            return self.clone();
        }
        Rgb8Image::from_fn(w, h, |x, y| self.get(reflect(x, self.width), reflect(y, self.height)))
    }

    /// Copies `src` into `self` with its top-left at `(x, y)`; out-of-range parts are dropped.
    pub fn blit(&mut self, src: &Rgb8Image, x: u32, y: u32) {
        for j in 0..src.height {
            let ty = y + j;
            if ty >= self.height {
                break;
            }
            let w = src.width.min(self.width.saturating_sub(x)) as usize;
            if w == 0 {
                return;
            }
            let s = src.offset(0, j);
            let d = self.offset(x, ty);
            self.data[d..d + w * 3].copy_from_slice(&src.data[s..s + w * 3]);
        }
    }

    /// Reads PNG, JPEG or TIFF. Alpha is dropped and 16-bit channels are right-shifted to 8 bits.
    pub fn open(path: impl AsRef<Path>) -> Result<Rgb8Image, ImageError> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| ImageError::Codec {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_dynamic(decoded))
    }

    pub fn from_dynamic(img: image::DynamicImage) -> Rgb8Image {
        use image::DynamicImage as D;
        let rgb = match img {
            D::ImageRgb16(_) | D::ImageRgba16(_) | D::ImageLuma16(_) | D::ImageLumaA16(_) => {
                let wide = img.to_rgb16();
                let (w, h) = wide.dimensions();
                let data = wide.into_raw().into_iter().map(|v| (v >> 8) as u8).collect();
                image::RgbImage::from_raw(w, h, data).expect("rgb16 conversion keeps dimensions")
            }
            other => other.to_rgb8(),
        };
        let (width, height) = rgb.dimensions();
        Rgb8Image {
            width,
            height,
            data: rgb.into_raw(),
        }
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions checked at construction")
    }

    /// Encodes as PNG bytes; deterministic for identical pixels.
    pub fn encode_png(&self) -> Vec<u8> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut buf, image::ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        buf.into_inner()
    }
}

fn reflect(i: u32, n: u32) -> u32 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(width: u32, height: u32, values: &[u8]) -> Rgb8Image {
        let data = values.iter().flat_map(|&v| [v, v, v]).collect();
        Rgb8Image::from_raw(width, height, data).unwrap()
    }

    fn ramp(w: u32, h: u32) -> Rgb8Image {
        Rgb8Image::from_fn(w, h, |x, y| [x as u8, y as u8, (x * 7 + y * 3) as u8])
    }

    #[test]
    fn identity_crop() {
        let img = ramp(17, 9);
        assert_eq!(img.crop((0, 0), (17, 9)).unwrap(), img);
    }

    #[test]
    fn column_crop() {
        let img = gray(2, 2, &[1, 2, 3, 4]);
        let col = img.crop((1, 0), (1, 2)).unwrap();
        assert_eq!(col, gray(1, 2, &[2, 4]));
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = Rgb8Image::filled(448, 448, [0, 0, 0]);
        assert!(matches!(
            img.crop((400, 400), (100, 100)),
            Err(ImageError::OutOfBounds { .. })
        ));
        assert!(img.crop((u32::MAX, 0), (2, 1)).is_err());
    }

    #[test]
    fn crop_composes() {
        let img = ramp(40, 30);
        let outer = img.crop((5, 3), (20, 20)).unwrap();
        let inner = outer.crop((4, 6), (10, 8)).unwrap();
        assert_eq!(inner, img.crop((9, 9), (10, 8)).unwrap());
    }

    #[test]
    fn flips_are_involutions() {
        let img = ramp(7, 5);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_vertical().flip_vertical(), img);
        assert_eq!(img.flip_horizontal().get(0, 2), img.get(6, 2));
        assert_eq!(img.flip_vertical().get(3, 0), img.get(3, 4));
    }

    #[test]
    fn channel_permutation() {
        let img = Rgb8Image::filled(2, 2, [10, 20, 30]);
        assert_eq!(img.permute_channels([2, 0, 1]).get(1, 1), [30, 10, 20]);
    }

    #[test]
    fn reflect_padding() {
        let img = gray(3, 1, &[1, 2, 3]);
        let padded = img.pad_reflect(7, 2);
        let row: Vec<u8> = (0..7).map(|x| padded.get(x, 0)[0]).collect();
        assert_eq!(row, vec![1, 2, 3, 2, 1, 2, 3]);
        assert_eq!(padded.get(2, 1), [3, 3, 3]);
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(Rgb8Image::from_raw(0, 4, vec![]).is_err());
        assert!(Rgb8Image::from_raw(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn sixteen_bit_ingest_shifts() {
        let wide =
            image::ImageBuffer::<image::Rgba<u16>, _>::from_pixel(2, 1, image::Rgba([0xABCD, 0x1234, 0xFFFF, 0x0000]));
        let img = Rgb8Image::from_dynamic(image::DynamicImage::ImageRgba16(wide));
        assert_eq!(img.get(1, 0), [0xAB, 0x12, 0xFF]);
    }

    #[test]
    fn png_roundtrip() {
        let img = ramp(13, 11);
        let bytes = img.encode_png();
        let back = image::load_from_memory(&bytes).unwrap();
        assert_eq!(Rgb8Image::from_dynamic(back), img);
    }
}
