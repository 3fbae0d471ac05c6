//! Comparison grids: one row per method, one column per sample.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::batch::{unit_to_byte, ImageBatch};
use crate::error::{Error, Result};

const GAP: u32 = 2;
const GAP_LEVEL: u8 = 96;

/// Tiles the first `columns` images of every row batch, separated by gray
/// gutters. Rows shorter than `columns` leave black cells.
pub fn render_grid(rows: &[&ImageBatch], columns: usize) -> Result<GrayImage> {
    let first = rows.first().ok_or_else(|| Error::InvalidArgument("grid needs at least one row".into()))?;
    let (h, w) = first.resolution();
    if rows.iter().any(|r| r.resolution() != (h, w)) {
        return Err(Error::Shape("grid rows differ in resolution".into()));
    }
    if columns == 0 {
        return Err(Error::InvalidArgument("grid needs at least one column".into()));
    }
    let (h, w) = (h as u32, w as u32);
    let width = columns as u32 * (w + GAP) - GAP;
    let height = rows.len() as u32 * (h + GAP) - GAP;
    let mut img = GrayImage::from_pixel(width, height, Luma([GAP_LEVEL]));
    for (ri, row) in rows.iter().enumerate() {
        for ci in 0..columns {
            let (x0, y0) = (ci as u32 * (w + GAP), ri as u32 * (h + GAP));
            let cell = (ci < row.len()).then(|| row.image(ci));
            for y in 0..h {
                for x in 0..w {
                    let v = cell.map_or(0, |c| unit_to_byte(c[(y * w + x) as usize]));
                    img.put_pixel(x0 + x, y0 + y, Luma([v]));
                }
            }
        }
    }
    Ok(img)
}

pub fn save_grid(rows: &[&ImageBatch], columns: usize, path: &Path) -> Result<()> {
    render_grid(rows, columns)?.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}
