//! Pixel-space L1 nearest-neighbor classification.

use crate::batch::ImageBatch;
use crate::error::{Error, Result};

pub fn l1(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum()
}

/// Index of the L1-nearest reference image for every query. Ties go to the
/// lowest reference index.
pub fn nearest_indices(queries: &ImageBatch, reference: &ImageBatch) -> Result<Vec<usize>> {
    if reference.is_empty() {
        return Err(Error::Data("reference set is empty".into()));
    }
    if queries.resolution() != reference.resolution() {
        return Err(Error::Shape(format!(
            "query resolution {:?} differs from reference {:?}",
            queries.resolution(),
            reference.resolution()
        )));
    }
    Ok((0..queries.len())
        .map(|q| {
            let img = queries.image(q);
            let mut best = (f64::INFINITY, 0);
            for r in 0..reference.len() {
                let d = l1(img, reference.image(r));
                if d < best.0 {
                    best = (d, r);
                }
            }
            best.1
        })
        .collect())
}

/// Fraction of queries whose nearest reference image has the query's class.
pub fn nn_classify_accuracy(queries: &ImageBatch, reference: &ImageBatch) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Data("no query images".into()));
    }
    let nn = nearest_indices(queries, reference)?;
    let hits = nn.iter().zip(queries.classes()).filter(|(&r, &c)| reference.classes()[r] == c).count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Mean per-image L1 distance between two aligned batches, divided by the
/// pixel count.
pub fn mean_pixel_l1(a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    if a.len() != b.len() || a.resolution() != b.resolution() || a.is_empty() {
        return Err(Error::Shape("batches must be non-empty and aligned".into()));
    }
    let (h, w) = a.resolution();
    let total: f64 = (0..a.len()).map(|i| l1(a.image(i), b.image(i))).sum();
    Ok(total / (a.len() * h * w) as f64)
}
