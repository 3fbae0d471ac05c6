//! k-NN manifold precision and recall.

use super::features::FeatureSet;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 3;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each point to its k-th nearest other point.
/// Neighbors are ranked by (distance, index).
pub fn knn_radii(f: &FeatureSet, k: usize) -> Vec<f64> {
    (0..f.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> =
                (0..f.len()).filter(|&j| j != i).map(|j| (sq_dist(f.row(i), f.row(j)), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[k - 1].0
        })
        .collect()
}

/// Fraction of `probe` points inside at least one k-NN ball of `manifold`.
fn coverage(manifold: &FeatureSet, radii: &[f64], probe: &FeatureSet) -> f64 {
    let covered = (0..probe.len())
        .filter(|&i| (0..manifold.len()).any(|j| sq_dist(probe.row(i), manifold.row(j)) <= radii[j]))
        .count();
    covered as f64 / probe.len() as f64
}

fn is_degenerate(f: &FeatureSet) -> bool {
    (1..f.len()).all(|i| f.row(i) == f.row(0))
}

/// `(precision, recall)`: the share of generated points inside the real
/// manifold, and of real points inside the generated one.
pub fn knn_precision_recall(real: &FeatureSet, gen: &FeatureSet, k: usize) -> Result<(f64, f64)> {
    if real.dim() != gen.dim() {
        return Err(Error::Shape(format!("feature widths differ: {} vs {}", real.dim(), gen.dim())));
    }
    if k == 0 || k >= real.len().min(gen.len()) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..{} (smaller set size)",
            real.len().min(gen.len())
        )));
    }
    for f in [real, gen] {
        if is_degenerate(f) {
            return Err(Error::Data(format!("{}: all feature vectors are identical", f.source)));
        }
    }
    let precision = coverage(real, &knn_radii(real, k), gen);
    let recall = coverage(gen, &knn_radii(gen, k), real);
    Ok((precision, recall))
}
