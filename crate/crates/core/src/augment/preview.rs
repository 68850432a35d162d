use super::{apply_transform_with, AugmentError, TransformKind, TransformParams};
use crate::image::Rgb8Image;
use crate::rng::RandomStream;

/// Gap in pixels between preview cells and around the grid.
pub const PREVIEW_BORDER: u32 = 2;
const BORDER_COLOR: [u8; 3] = [255, 255, 255];

/// Grid with one row per transform kind and one column per strength.
///
/// Cell `(row, col)` uses the stream `rng / row / col`, so cells are independent of
/// grid shape.
pub fn render_preview_grid(
    image: &Rgb8Image,
    kinds: &[TransformKind],
    strengths: &[f64],
    params: &TransformParams,
    rng: &RandomStream,
) -> Result<Rgb8Image, AugmentError> {
    if kinds.is_empty() || strengths.is_empty() {
        return Err(AugmentError::EmptyInput);
    }
    let (w, h) = image.dimensions();
    let grid_w = strengths.len() as u32 * (w + PREVIEW_BORDER) + PREVIEW_BORDER;
    let grid_h = kinds.len() as u32 * (h + PREVIEW_BORDER) + PREVIEW_BORDER;
    let mut grid = Rgb8Image::filled(grid_w, grid_h, BORDER_COLOR);
    for (row, &kind) in kinds.iter().enumerate() {
        let row_stream = rng.derive(row as u64);
        for (col, &strength) in strengths.iter().enumerate() {
            let cell = apply_transform_with(kind, strength, image, params, &row_stream.derive(col as u64))?;
            let x = PREVIEW_BORDER + col as u32 * (w + PREVIEW_BORDER);
            let y = PREVIEW_BORDER + row as u32 * (h + PREVIEW_BORDER);
            grid.blit(&cell, x, y);
        }
    }
    Ok(grid)
}
