//! IDX files (unsigned-byte payloads only) and the EMNIST letters split.
//!
//! Layout: two zero bytes, a type code (0x08 = u8), the number of
//! dimensions, each dimension as a big-endian u32, then row-major data.

use std::fs;
use std::path::Path;

use image::GrayImage;

use super::png::fit_to_resolution;
use super::{DomainDataset, GlyphItem, Split};
use crate::batch::Domain;
use crate::error::{Error, Result};

const TYPE_U8: u8 = 0x08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn read_idx(bytes: &[u8]) -> Result<IdxArray> {
    let bad = |r: String| Error::format("IDX file", r);
    if bytes.len() < 4 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("magic must start with two zero bytes".into()));
    }
    if bytes[2] != TYPE_U8 {
        return Err(bad(format!("unsupported element type 0x{:02x} (only unsigned bytes)", bytes[2])));
    }
    let nd = bytes[3] as usize;
    if nd == 0 {
        return Err(bad("zero dimensions".into()));
    }
    let header = 4 + 4 * nd;
    if bytes.len() < header {
        return Err(bad(format!("truncated header for {nd} dimensions")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("dimension product overflows".into()))?;
    let payload = &bytes[header..];
    if payload.len() != n {
        return Err(bad(format!("dims {dims:?} need {n} bytes, found {}", payload.len())));
    }
    Ok(IdxArray { dims, data: payload.to_vec() })
}

pub fn write_idx(a: &IdxArray) -> Result<Vec<u8>> {
    if a.dims.is_empty() || a.dims.len() > 255 {
        return Err(Error::InvalidArgument(format!("IDX needs 1..=255 dimensions, got {}", a.dims.len())));
    }
    if a.dims.iter().product::<usize>() != a.data.len() {
        return Err(Error::Shape(format!("dims {:?} do not match {} bytes", a.dims, a.data.len())));
    }
    let mut out = vec![0, 0, TYPE_U8, a.dims.len() as u8];
    for &d in &a.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&a.data);
    Ok(out)
}

fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_idx(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// EMNIST letters (uncompressed IDX). Labels 1..=26 map to classes 0..=25.
/// EMNIST stores each image transposed; `transposed = true` undoes that.
/// Images are then centered (or shrunk) to `resolution`.
pub fn load_emnist_letters(images: &Path, labels: &Path, transposed: bool, resolution: usize) -> Result<DomainDataset> {
    let img = read_idx_file(images)?;
    let lab = read_idx_file(labels)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
        return Err(Error::Data(format!("image dims {:?} and label dims {:?} do not describe one set", img.dims, lab.dims)));
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if transposed && h != w {
        return Err(Error::Data(format!("cannot transpose non-square {h}x{w} images")));
    }
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let label = lab.data[i];
        if !(1..=26).contains(&label) {
            return Err(Error::Data(format!("label {label} at index {i} is not a capital-letter class (1..=26)")));
        }
        let raw = &img.data[i * h * w..(i + 1) * h * w];
        let px: Vec<u8> = if transposed { (0..h * w).map(|k| raw[(k % w) * w + k / w]).collect() } else { raw.to_vec() };
        let g = GrayImage::from_raw(w as u32, h as u32, px).expect("size checked");
        items.push(GlyphItem {
            pixels: fit_to_resolution(&g, resolution).into_raw(),
            class: label - 1,
            name: format!("emnist_{i:06}"),
        });
    }
    Ok(DomainDataset {
        domain: Domain::Handwritten,
        resolution,
        items,
        split: Split::All,
        provenance: format!("emnist:{}:transposed={transposed}", images.display()),
    })
}
