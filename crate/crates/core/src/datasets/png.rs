//! `<root>/<LETTER>/<name>.png` directories of 8-bit grayscale glyphs.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, ImageFormat};

use super::{DomainDataset, GlyphItem, Split};
use crate::batch::{class_from_letter, class_letter, Domain, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectoryLoad {
    pub dataset: DomainDataset,
    /// Files that could not be decoded or were not 8-bit grayscale.
    pub skipped: Vec<PathBuf>,
}

/// Scales `img` down (aspect preserved) if it exceeds `res`, then centers it
/// on a black `res x res` canvas.
pub fn fit_to_resolution(img: &GrayImage, res: usize) -> GrayImage {
    let (w, h) = img.dimensions();
    let r = res as u32;
    let scaled = if w > r || h > r {
        let s = r as f64 / w.max(h) as f64;
        let nw = ((w as f64 * s).round() as u32).clamp(1, r);
        let nh = ((h as f64 * s).round() as u32).clamp(1, r);
        image::imageops::resize(img, nw, nh, FilterType::Triangle)
    } else {
        img.clone()
    };
    let mut canvas = GrayImage::new(r, r);
    let (x0, y0) = ((r - scaled.width()) / 2, (r - scaled.height()) / 2);
    image::imageops::replace(&mut canvas, &scaled, x0 as i64, y0 as i64);
    canvas
}

/// Decodes one 8-bit grayscale PNG and fits it to `res x res`.
pub fn decode_glyph(bytes: &[u8], res: usize) -> Result<GrayImage> {
    if res == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    match image::load_from_memory_with_format(bytes, ImageFormat::Png) {
        Ok(DynamicImage::ImageLuma8(g)) => Ok(fit_to_resolution(&g, res)),
        Ok(other) => Err(Error::Data(format!("{:?} is not 8-bit grayscale", other.color()))),
        Err(e) => Err(Error::Data(format!("undecodable PNG: {e}"))),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn is_hidden(p: &Path) -> bool {
    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'))
}

/// Loads every class directory under `root`. Files are visited in
/// lexicographic order; undecodable or non-8-bit-gray PNGs are skipped with a
/// warning and listed in the result.
pub fn load_image_directory(root: &Path, domain: Domain, resolution: usize) -> Result<DirectoryLoad> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    let mut seen_class = false;
    for class_dir in sorted_entries(root)? {
        if is_hidden(&class_dir) || !class_dir.is_dir() {
            continue;
        }
        let label = class_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let class = class_from_letter(&label).ok_or_else(|| {
            Error::Data(format!("unknown class directory `{}` (expected a single capital letter)", class_dir.display()))
        })?;
        seen_class = true;
        let mut loaded = 0;
        for file in sorted_entries(&class_dir)? {
            if is_hidden(&file) || file.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png")) != Some(true) {
                continue;
            }
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let fitted = match decode_glyph(&bytes, resolution) {
                Ok(g) => g,
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    skipped.push(file);
                    continue;
                }
            };
            let name = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            items.push(GlyphItem { pixels: fitted.into_raw(), class, name });
            loaded += 1;
        }
        if loaded == 0 {
            return Err(Error::Data(format!("class directory {} contains no usable images", class_dir.display())));
        }
    }
    if !seen_class {
        return Err(Error::Data(format!("{} contains no class directories", root.display())));
    }
    if !skipped.is_empty() {
        log::warn!("{} file(s) skipped under {}", skipped.len(), root.display());
    }
    let dataset = DomainDataset {
        domain,
        resolution,
        items,
        split: Split::All,
        provenance: format!("dir:{}", root.display()),
    };
    Ok(DirectoryLoad { dataset, skipped })
}

/// Writes `<root>/<LETTER>/<name>.png` for every item.
pub fn save_image_directory(ds: &DomainDataset, root: &Path) -> Result<()> {
    let r = ds.resolution as u32;
    for c in 0..NUM_CLASSES as u8 {
        if ds.items.iter().any(|it| it.class == c) {
            let dir = root.join(class_letter(c).to_string());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    for it in &ds.items {
        let path = root.join(class_letter(it.class).to_string()).join(format!("{}.png", it.name));
        let img = GrayImage::from_raw(r, r, it.pixels.clone())
            .ok_or_else(|| Error::Shape(format!("item {} does not match resolution {r}", it.name)))?;
        img.save(&path).map_err(|e| Error::Image { path: path.clone(), reason: e.to_string() })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb, RgbImage};

    fn write_gray(path: &Path, w: u32, h: u32, v: u8) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        GrayImage::from_pixel(w, h, Luma([v])).save(path).unwrap();
    }

    #[test]
    fn counts_order_and_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        for c in 0..26u8 {
            for i in (0..10).rev() {
                write_gray(&dir.path().join(class_letter(c).to_string()).join(format!("{i:02}.png")), 4, 4, 255);
            }
        }
        let a = load_image_directory(dir.path(), Domain::Handwritten, 4).unwrap();
        assert_eq!(a.dataset.len(), 260);
        assert!(a.skipped.is_empty());
        assert_eq!(a.dataset.items[0].name, "00");
        assert_eq!(a.dataset.items[9].name, "09");
        assert_eq!(a.dataset.items[10].class, 1);
        let b = load_image_directory(dir.path(), Domain::Handwritten, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.dataset.to_batch().unwrap().pixels().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pads_small_and_shrinks_large_images() {
        let small = GrayImage::from_pixel(2, 2, Luma([200]));
        let f = fit_to_resolution(&small, 4);
        assert_eq!(f.into_raw(), vec![0, 0, 0, 0, 0, 200, 200, 0, 0, 200, 200, 0, 0, 0, 0, 0]);
        let big = GrayImage::from_pixel(16, 8, Luma([255]));
        let f = fit_to_resolution(&big, 4);
        assert_eq!(f.dimensions(), (4, 4));
        assert_eq!(f.get_pixel(0, 0)[0], 0);
        assert_eq!(f.get_pixel(0, 1)[0], 255);
    }

    #[test]
    fn skips_wrong_depth_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(&dir.path().join("A/ok.png"), 4, 4, 9);
        RgbImage::from_pixel(4, 4, Rgb([1, 2, 3])).save(dir.path().join("A/rgb.png")).unwrap();
        fs::write(dir.path().join("A/junk.png"), b"not a png").unwrap();
        let l = load_image_directory(dir.path(), Domain::Printed, 4).unwrap();
        assert_eq!(l.dataset.len(), 1);
        assert_eq!(l.skipped.len(), 2);
    }

    #[test]
    fn rejects_unknown_and_empty_classes() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(&dir.path().join("a/x.png"), 4, 4, 9);
        assert!(matches!(load_image_directory(dir.path(), Domain::Printed, 4), Err(Error::Data(_))));
        let dir = tempfile::tempdir().unwrap();
        write_gray(&dir.path().join("A/x.png"), 4, 4, 9);
        fs::create_dir_all(dir.path().join("B")).unwrap();
        let err = load_image_directory(dir.path(), Domain::Printed, 4).unwrap_err();
        assert!(err.to_string().contains("no usable images"));
    }

    #[test]
    fn save_then_load_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = DomainDataset {
            domain: Domain::Printed,
            resolution: 3,
            items: vec![
                GlyphItem { pixels: (0..9).map(|v| v * 30).collect(), class: 0, name: "a0".into() },
                GlyphItem { pixels: vec![255; 9], class: 2, name: "c0".into() },
            ],
            split: Split::All,
            provenance: String::new(),
        };
        save_image_directory(&ds, dir.path()).unwrap();
        let back = load_image_directory(dir.path(), Domain::Printed, 3).unwrap().dataset;
        assert_eq!(back.items, ds.items);
    }
}
