//! Desk-scale benchmark: train everything from one config, convert the
//! test subsets with both methods at several timesteps and seeds, and
//! collect the quantities the end-to-end checks are stated in.

use cycledm::batch::{Direction, ImageBatch};
use cycledm::conversion::{convert_with_raw, sdedit_convert, train_conversion, IdentityConverter};
use cycledm::diffusion::{smooth, train_ddpm, Ddpm, NoiseSchedule};
use cycledm::evaluation::{
    compute_fid, evaluate_generated, mean_pixel_l1, nn_classify_accuracy, ocr_gain_experiment,
    train_feature_extractor, EvalContext, EvalReport, FeatureExtractor, OcrGain,
};
use cycledm::rng::stream_for;
use cycledm::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::{convert_batch, prepare_data, Method};

pub const DIRECTIONS: [Direction; 2] = [Direction::HwToMp, Direction::MpToHw];

/// Mean of the first and last `window` values.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Drop {
    pub initial: f64,
    pub last: f64,
}

impl Drop {
    pub fn of(values: &[f64], window: usize) -> Drop {
        let s = smooth(values, window);
        Drop { initial: s[0], last: *s.last().expect("non-empty") }
    }

    pub fn fraction(&self) -> f64 {
        1.0 - self.last / self.initial
    }
}

/// Accuracy and style distance of one (t, seed) cell, both directions pooled.
#[derive(Clone, Debug, Serialize)]
pub struct Cell {
    pub t_star: usize,
    pub seed: u64,
    pub cycledm_accuracy: f64,
    pub sdedit_accuracy: f64,
    pub cycledm_source_l1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectionCheck {
    pub direction: Direction,
    pub target_domain_rate: f64,
    pub fid_converted: f64,
    pub fid_source: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Benchmark {
    pub ddpm_loss: Drop,
    pub extractor_held_out_accuracy: f64,
    pub reconstruction: Vec<(usize, Drop)>,
    pub cells: Vec<Cell>,
    /// At the configured `t_star`, pooled over seeds.
    pub directions: Vec<DirectionCheck>,
    pub identity_reduction_bit_exact: bool,
    /// Nearest-neighbor recognition of the handwritten test subset before
    /// and after CycleDM conversion at the configured `t_star`.
    pub ocr: OcrGain,
    pub reports: Vec<EvalReport>,
}

impl Benchmark {
    pub fn cells_at(&self, t: usize) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.t_star == t)
    }
}

fn pooled(parts: &[ImageBatch]) -> Result<ImageBatch> {
    ImageBatch::concat(parts)
}

/// The identity-reduction property on a small batch: CycleDM with `F = id`
/// and SDEdit consume the same random numbers and must agree bit for bit.
pub fn identity_reduction(x: &ImageBatch, direction: Direction, t: usize, ddpm: &Ddpm, seed: u64) -> Result<bool> {
    let mut a = stream_for(seed, "identity-reduction");
    let mut b = stream_for(seed, "identity-reduction");
    let raw = convert_with_raw(&IdentityConverter, x, direction, t, ddpm, &mut a)?;
    let cyc = raw.map(|v| v.clamp(-1.0, 1.0));
    let sd = sdedit_convert(x, direction, t, ddpm, &mut b)?;
    Ok(cyc.data().iter().zip(sd.pixels().data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

pub fn run_benchmark(cfg: &RunConfig, mut progress: impl FnMut(&str)) -> Result<Benchmark> {
    if !cfg.eval.t_stars.contains(&cfg.t_star) {
        return Err(Error::InvalidArgument(format!(
            "conversion.t_star {} must be one of eval.t_stars {:?}",
            cfg.t_star, cfg.eval.t_stars
        )));
    }
    let data = prepare_data(cfg)?;
    let schedule = NoiseSchedule::from_params(&cfg.schedule)?;
    let (hw_train, mp_train) = (data.hw_train.to_batch()?, data.mp_train.to_batch()?);
    let (hw_test_all, mp_test_all) = (data.hw_test.to_batch()?, data.mp_test.to_batch()?);

    progress("training DDPM");
    let (ddpm, log) = train_ddpm(&hw_train, &mp_train, &schedule, &cfg.unet, cfg.ddpm_mode, &cfg.ddpm, cfg.seed, |_, _| {})?;
    let ddpm_loss = Drop::of(&log.losses, 100);

    progress("training feature extractor");
    let (extractor, ex_report): (FeatureExtractor, _) = train_feature_extractor(
        &[&hw_train, &mp_train],
        &[&hw_test_all, &mp_test_all],
        &cfg.extractor_arch(),
        &cfg.eval.extractor,
        cfg.seed,
    )?;

    let sub = |d: &cycledm::datasets::DomainDataset| d.take_per_class(cfg.eval.per_class).to_batch();
    let sources = [sub(&data.hw_test)?, sub(&data.mp_test)?];
    let targets = [&mp_test_all, &hw_test_all];

    let mut reconstruction = Vec::new();
    let mut cells = Vec::new();
    let mut directions = Vec::new();
    let mut reports = Vec::new();
    let mut ocr = None;
    let identity_reduction_bit_exact =
        identity_reduction(&sources[0].slice(0, 8.min(sources[0].len())), Direction::HwToMp, cfg.t_star, &ddpm, cfg.seed)?;

    for &t in &cfg.eval.t_stars {
        progress(&format!("training conversion pair at t = {t}"));
        let (pair, clog) =
            train_conversion(&ddpm, &hw_train, &mp_train, t, &cfg.conversion_arch, &cfg.conversion, cfg.seed, |_, _, _| {})?;
        reconstruction.push((t, Drop::of(&clog.reconstruction(), 25)));
        if t == cfg.t_star {
            let convert = |x: &ImageBatch| convert_batch(x, Direction::HwToMp, Method::CycleDm, t, &ddpm, Some(&pair), cfg.seed);
            ocr = Some(ocr_gain_experiment(&sources[0], &hw_train, &mp_train, convert)?);
        }

        // outputs[direction][method] per seed
        let mut outputs: Vec<[Vec<ImageBatch>; 2]> = vec![[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
        for &seed in &cfg.eval.seeds {
            progress(&format!("converting at t = {t}, seed {seed}"));
            let mut per_method = [Vec::new(), Vec::new()];
            for (di, &dir) in DIRECTIONS.iter().enumerate() {
                for (mi, method) in [Method::CycleDm, Method::Sdedit].into_iter().enumerate() {
                    let y = convert_batch(&sources[di], dir, method, t, &ddpm, Some(&pair), seed)?;
                    per_method[mi].push(y.clone());
                    outputs[di][mi].push(y);
                }
            }
            let acc = |mi: usize| -> Result<f64> {
                let mut hit = 0.0;
                let mut n = 0usize;
                for di in 0..2 {
                    hit += nn_classify_accuracy(&per_method[mi][di], targets[di])? * per_method[mi][di].len() as f64;
                    n += per_method[mi][di].len();
                }
                Ok(hit / n as f64)
            };
            let mut l1 = 0.0;
            let mut n = 0usize;
            for di in 0..2 {
                l1 += mean_pixel_l1(&sources[di], &per_method[0][di])? * sources[di].len() as f64;
                n += sources[di].len();
            }
            cells.push(Cell {
                t_star: t,
                seed,
                cycledm_accuracy: acc(0)?,
                sdedit_accuracy: acc(1)?,
                cycledm_source_l1: l1 / n as f64,
            });
        }

        let ctx = EvalContext { extractor: &extractor, target_test: targets[0], k: cfg.eval.k };
        for (di, &dir) in DIRECTIONS.iter().enumerate() {
            let ctx = EvalContext { target_test: targets[di], ..ctx };
            for (mi, method) in [Method::CycleDm, Method::Sdedit].into_iter().enumerate() {
                let all = pooled(&outputs[di][mi])?;
                reports.push(evaluate_generated(&ctx, &all, dir, method.id(), t, cfg.eval.seeds.clone())?);
            }
            if t == cfg.t_star {
                let converted = pooled(&outputs[di][0])?;
                let real = extractor.embed(targets[di].pixels(), "target test")?;
                directions.push(DirectionCheck {
                    direction: dir,
                    target_domain_rate: extractor.domain_rate(&converted, dir.target())?,
                    fid_converted: compute_fid(&real, &extractor.embed(converted.pixels(), "converted")?)?,
                    fid_source: compute_fid(&real, &extractor.embed(sources[di].pixels(), "source")?)?,
                });
            }
        }
    }

    Ok(Benchmark {
        ddpm_loss,
        extractor_held_out_accuracy: ex_report.held_out_accuracy.unwrap_or(0.0),
        reconstruction,
        cells,
        directions,
        identity_reduction_bit_exact,
        ocr: ocr.expect("t_star is one of eval.t_stars"),
        reports,
    })
}
