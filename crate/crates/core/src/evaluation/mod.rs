//! Metric suite: learned feature space, FID, k-NN precision/recall, pixel-L1
//! nearest-neighbor class accuracy, the OCR-gain experiment and reports.

mod features;
mod fid;
mod grid;
mod nn;
mod prd;
mod report;

pub use features::{
    joint_label, train_feature_extractor, ExtractorArch, ExtractorParams, ExtractorReport, FeatureExtractor,
    FeatureSet, EXTRACTOR_KIND, JOINT_LABELS,
};
pub use fid::{compute_fid, fid_from_moments, mean_and_cov, COV_EPS, NEG_EIG_TOL};
pub use grid::{render_grid, save_grid};
pub use nn::{l1, mean_pixel_l1, nearest_indices, nn_classify_accuracy};
pub use prd::{knn_precision_recall, knn_radii, DEFAULT_K};
pub use report::{build_report, parse_reports, render_table, reports_to_json, EvalReport, ReportInputs};

use crate::batch::{Direction, ImageBatch};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OcrGain {
    pub baseline: f64,
    pub converted: f64,
}

/// Nearest-neighbor "OCR" of handwritten test glyphs, first against the
/// handwritten training set, then after conversion against the printed one.
pub fn ocr_gain_experiment(
    hw_test: &ImageBatch,
    hw_train: &ImageBatch,
    mp_train: &ImageBatch,
    convert: impl FnOnce(&ImageBatch) -> Result<ImageBatch>,
) -> Result<OcrGain> {
    let baseline = nn_classify_accuracy(hw_test, hw_train)?;
    let converted_batch = convert(hw_test)?;
    if converted_batch.classes() != hw_test.classes() {
        return Err(Error::InvalidArgument("converter changed the class labels or item count".into()));
    }
    let converted = nn_classify_accuracy(&converted_batch, mp_train)?;
    Ok(OcrGain { baseline, converted })
}

/// Everything needed to score one generated set against target-domain data.
pub struct EvalContext<'a> {
    pub extractor: &'a FeatureExtractor,
    /// Real target-domain test images: FID / precision / recall reference
    /// and the search set for nearest-neighbor accuracy.
    pub target_test: &'a ImageBatch,
    pub k: usize,
}

/// Scores `generated` (labelled with the source classes) for one method.
pub fn evaluate_generated(
    ctx: &EvalContext<'_>,
    generated: &ImageBatch,
    direction: Direction,
    method: &str,
    t_star: usize,
    seeds: Vec<u64>,
) -> Result<EvalReport> {
    if generated.is_empty() {
        return Err(Error::Data("generated set is empty".into()));
    }
    let real = ctx.extractor.embed(ctx.target_test.pixels(), "target test")?;
    let gen = ctx.extractor.embed(generated.pixels(), method)?;
    let (precision, recall) = knn_precision_recall(&real, &gen, ctx.k)?;
    build_report(ReportInputs {
        direction: Some(direction),
        method: Some(method.to_string()),
        t_star: Some(t_star),
        accuracy: Some(nn_classify_accuracy(generated, ctx.target_test)?),
        precision: Some(precision),
        recall: Some(recall),
        fid: Some(compute_fid(&real, &gen)?),
        n_generated: generated.len(),
        n_reference: ctx.target_test.len(),
        seeds,
    })
}
