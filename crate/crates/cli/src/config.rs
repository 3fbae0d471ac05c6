//! Flat, typed `key = value` run configuration.
//!
//! Every key has a default and a one-line description ([`SCHEMA`]). Files may
//! hold any subset of keys; `--set key=value` overrides are applied on top.
//! Unknown keys, duplicates, type errors and range errors are all collected
//! and reported together.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cycledm::conversion::{ConversionArch, ConversionHyperparams};
use cycledm::datasets::SyntheticGlyphSpec;
use cycledm::diffusion::{DdpmTrainParams, DomainMode, ScheduleParams, UNetConfig};
use cycledm::evaluation::{ExtractorArch, ExtractorParams};
use cycledm::rng::sha256_hex;
use cycledm::{Error, Result};

pub struct Field {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn f(key: &'static str, default: &'static str, doc: &'static str) -> Field {
    Field { key, default, doc }
}

pub const SCHEMA: &[Field] = &[
    f("seed", "0", "root seed; every random stream is derived from it by name"),
    f("output_dir", "runs/desk", "directory owned by this run"),
    f("data.source", "synthetic", "synthetic | directories | emnist"),
    f("data.resolution", "32", "square image side in pixels"),
    f("data.train_fraction", "0.7", "per-class share of items used for training"),
    f("data.per_class", "30", "synthetic: images per letter and domain"),
    f("data.hw_jitter", "1.0", "synthetic: handwriting vertex jitter and distortion scale"),
    f("data.hw_wobble", "1.0", "synthetic: handwriting stroke wobble amplitude"),
    f("data.hw_width", "0.06", "synthetic: handwriting stroke width (fraction of the box)"),
    f("data.mp_width_min", "0.11", "synthetic: printed stroke width lower bound"),
    f("data.mp_width_max", "0.14", "synthetic: printed stroke width upper bound"),
    f("data.serif_prob", "0.7", "synthetic: probability a printed glyph has serifs"),
    f("data.hw_dir", "", "directories: handwritten <LETTER>/<name>.png tree"),
    f("data.mp_dir", "", "directories/emnist: printed <LETTER>/<name>.png tree"),
    f("data.emnist_images", "", "emnist: uncompressed letters image IDX file"),
    f("data.emnist_labels", "", "emnist: uncompressed letters label IDX file"),
    f("data.emnist_transposed", "true", "emnist: undo the transposed storage"),
    f("schedule.steps", "100", "diffusion steps T"),
    f("schedule.beta_start", "0.001", "beta_1 of the linear schedule"),
    f("schedule.beta_end", "0.2", "beta_T of the linear schedule"),
    f("ddpm.base_channels", "16", "U-Net channels at full resolution"),
    f("ddpm.mode", "joint", "joint (one network, domain token) | per_domain (two networks)"),
    f("ddpm.steps", "1500", "optimizer steps"),
    f("ddpm.batch_size", "32", "images per step, half from each domain"),
    f("ddpm.lr", "0.002", "Adam learning rate"),
    f("ddpm.null_rate", "0.1", "probability of training with the null class token"),
    f("ddpm.grad_clip", "1.0", "global gradient-norm clip"),
    f("ddpm.ema_decay", "0.995", "weight EMA decay; 0 disables the average"),
    f("conversion.t_star", "60", "timestep at which F and G operate"),
    f("conversion.base_channels", "8", "conversion network width"),
    f("conversion.res_blocks", "2", "residual blocks at the bottleneck"),
    f("conversion.disc_channels", "8", "discriminator width"),
    f("conversion.lambda_cycle", "2.0", "cycle-consistency weight"),
    f("conversion.lambda_identity", "1.0", "identity weight"),
    f("conversion.gp_weight", "10.0", "gradient-penalty weight"),
    f("conversion.steps", "300", "optimizer steps (each updates D then F, G)"),
    f("conversion.batch_size", "16", "class-matched pairs per step"),
    f("conversion.lr", "0.0002", "Adam learning rate (beta1 = 0.5)"),
    f("eval.k", "3", "neighbors for precision/recall"),
    f("eval.seeds", "0,1,2", "sampling seeds for repeated conversion"),
    f("eval.t_stars", "40,50,60", "timesteps compared in the benchmark"),
    f("eval.per_class", "2", "test images per class converted in the benchmark"),
    f("eval.extractor_steps", "600", "feature extractor optimizer steps"),
    f("eval.extractor_batch_size", "64", "feature extractor batch size"),
    f("eval.extractor_lr", "0.002", "feature extractor learning rate"),
    f("eval.grid_columns", "13", "samples per grid row"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Directories,
    Emnist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub resolution: usize,
    pub train_fraction: f64,
    pub synthetic: SyntheticGlyphSpec,
    pub hw_dir: Option<PathBuf>,
    pub mp_dir: Option<PathBuf>,
    pub emnist_images: Option<PathBuf>,
    pub emnist_labels: Option<PathBuf>,
    pub emnist_transposed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub t_stars: Vec<usize>,
    pub per_class: usize,
    pub extractor: ExtractorParams,
    pub grid_columns: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub schedule: ScheduleParams,
    pub unet: UNetConfig,
    pub ddpm_mode: DomainMode,
    pub ddpm: DdpmTrainParams,
    pub t_star: usize,
    pub conversion_arch: ConversionArch,
    pub conversion: ConversionHyperparams,
    pub eval: EvalConfig,
    raw: BTreeMap<&'static str, String>,
}

fn schema_field(key: &str) -> Option<&'static Field> {
    SCHEMA.iter().find(|f| f.key == key)
}

/// `key = value` lines; `#` starts a comment.
fn parse_lines(text: &str, origin: &str, errors: &mut Vec<String>) -> Vec<(&'static str, String)> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errors.push(format!("{origin}:{}: expected `key = value`", n + 1));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        match schema_field(k) {
            None => errors.push(format!("{origin}:{}: unknown key `{k}`", n + 1)),
            Some(f) if out.iter().any(|(seen, _)| *seen == f.key) => {
                errors.push(format!("{origin}:{}: duplicate key `{k}`", n + 1))
            }
            Some(f) => out.push((f.key, v.to_string())),
        }
    }
    out
}

struct Reader<'a> {
    raw: &'a BTreeMap<&'static str, String>,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn get<T: std::str::FromStr>(&mut self, key: &'static str) -> Option<T> {
        let v = &self.raw[key];
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("{key}: cannot parse `{v}` as {}", std::any::type_name::<T>()));
                None
            }
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &'static str) -> Option<Vec<T>> {
        let v = self.raw[key].clone();
        let items: std::result::Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse()).collect();
        match items {
            Ok(x) if !x.is_empty() => Some(x),
            _ => {
                self.errors.push(format!("{key}: expected a comma-separated list, got `{v}`"));
                None
            }
        }
    }

    fn path(&mut self, key: &'static str) -> Option<PathBuf> {
        let v = &self.raw[key];
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(msg());
        }
    }
}

impl RunConfig {
    /// Defaults, then `text` (if any), then `overrides` (`key=value`).
    pub fn build(text: Option<(&str, &str)>, overrides: &[String]) -> Result<RunConfig> {
        let mut errors = Vec::new();
        let mut raw: BTreeMap<&'static str, String> = SCHEMA.iter().map(|f| (f.key, f.default.to_string())).collect();
        if let Some((text, origin)) = text {
            for (k, v) in parse_lines(text, origin, &mut errors) {
                raw.insert(k, v);
            }
        }
        for o in overrides {
            match o.split_once('=') {
                None => errors.push(format!("--set {o}: expected key=value")),
                Some((k, v)) => match schema_field(k.trim()) {
                    None => errors.push(format!("--set: unknown key `{}`", k.trim())),
                    Some(f) => {
                        raw.insert(f.key, v.trim().to_string());
                    }
                },
            }
        }
        let mut cfg = Self::from_raw(&raw, errors)?;
        cfg.raw = raw;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::build(Some((&text, &path.display().to_string())), overrides)
    }

    pub fn defaults() -> RunConfig {
        Self::build(None, &[]).expect("schema defaults are valid")
    }

    fn from_raw(raw: &BTreeMap<&'static str, String>, errors: Vec<String>) -> Result<RunConfig> {
        let mut r = Reader { raw, errors };
        let source = match raw["data.source"].as_str() {
            "synthetic" => Some(DataSource::Synthetic),
            "directories" => Some(DataSource::Directories),
            "emnist" => Some(DataSource::Emnist),
            other => {
                r.errors.push(format!("data.source: `{other}` is not one of synthetic, directories, emnist"));
                None
            }
        };
        let mode = match raw["ddpm.mode"].parse::<DomainMode>() {
            Ok(m) => Some(m),
            Err(e) => {
                r.errors.push(format!("ddpm.mode: {e}"));
                None
            }
        };
        let seed = r.get("seed");
        let resolution: Option<usize> = r.get("data.resolution");
        let train_fraction = r.get("data.train_fraction");
        let per_class = r.get("data.per_class");
        let hw_jitter = r.get("data.hw_jitter");
        let hw_wobble = r.get("data.hw_wobble");
        let hw_width = r.get("data.hw_width");
        let mp_width_min = r.get("data.mp_width_min");
        let mp_width_max = r.get("data.mp_width_max");
        let serif_prob = r.get("data.serif_prob");
        let synthetic = (|| {
            Some(SyntheticGlyphSpec {
                resolution: 0,
                per_class: per_class?,
                hw_jitter: hw_jitter?,
                hw_wobble: hw_wobble?,
                hw_width: hw_width?,
                mp_width_min: mp_width_min?,
                mp_width_max: mp_width_max?,
                serif_prob: serif_prob?,
                seed: 0,
            })
        })();
        let emnist_transposed = r.get("data.emnist_transposed");
        let (steps, beta_start, beta_end) = (r.get("schedule.steps"), r.get("schedule.beta_start"), r.get("schedule.beta_end"));
        let schedule = (|| Some(ScheduleParams { steps: steps?, beta_start: beta_start?, beta_end: beta_end? }))();
        let unet_channels = r.get("ddpm.base_channels");
        let ema: Option<f32> = r.get("ddpm.ema_decay");
        let (d_steps, d_bs, d_lr) = (r.get("ddpm.steps"), r.get("ddpm.batch_size"), r.get("ddpm.lr"));
        let (d_null, d_clip) = (r.get("ddpm.null_rate"), r.get("ddpm.grad_clip"));
        let ddpm = (|| {
            Some(DdpmTrainParams {
                steps: d_steps?,
                batch_size: d_bs?,
                lr: d_lr?,
                null_rate: d_null?,
                grad_clip: d_clip?,
                ema_decay: ema.and_then(|d| (d > 0.0).then_some(d)),
                log_every: 100,
            })
        })();
        let t_star = r.get("conversion.t_star");
        let (cb, cr, cd) = (r.get("conversion.base_channels"), r.get("conversion.res_blocks"), r.get("conversion.disc_channels"));
        let conv_arch: Option<(usize, usize, usize)> = (|| Some((cb?, cr?, cd?)))();
        let (lc, li, gp) = (r.get("conversion.lambda_cycle"), r.get("conversion.lambda_identity"), r.get("conversion.gp_weight"));
        let (c_bs, c_steps, c_lr) = (r.get("conversion.batch_size"), r.get("conversion.steps"), r.get("conversion.lr"));
        let conversion = (|| {
            Some(ConversionHyperparams {
                lambda_cycle: lc?,
                lambda_identity: li?,
                gp_weight: gp?,
                batch_size: c_bs?,
                steps: c_steps?,
                lr: c_lr?,
            })
        })();
        let (k, seeds, t_stars, eval_per_class) =
            (r.get("eval.k"), r.list("eval.seeds"), r.list("eval.t_stars"), r.get("eval.per_class"));
        let (x_steps, x_bs, x_lr, cols) = (
            r.get("eval.extractor_steps"),
            r.get("eval.extractor_batch_size"),
            r.get("eval.extractor_lr"),
            r.get("eval.grid_columns"),
        );
        let eval = (|| {
            Some(EvalConfig {
                k: k?,
                seeds: seeds?,
                t_stars: t_stars?,
                per_class: eval_per_class?,
                extractor: ExtractorParams { steps: x_steps?, batch_size: x_bs?, lr: x_lr? },
                grid_columns: cols?,
            })
        })();
        let hw_dir = r.path("data.hw_dir");
        let mp_dir = r.path("data.mp_dir");
        let emnist_images = r.path("data.emnist_images");
        let emnist_labels = r.path("data.emnist_labels");
        let output_dir = r.path("output_dir");
        r.check(output_dir.is_some(), || "output_dir: must not be empty".into());

        // Semantic checks, only where the fields parsed.
        if let Some(s) = &schedule {
            if let Err(e) = cycledm::diffusion::NoiseSchedule::from_params(s) {
                let key = if !(s.beta_start > 0.0 && s.beta_start.is_finite()) {
                    "schedule.beta_start"
                } else if !(s.beta_end < 1.0 && s.beta_end >= s.beta_start) {
                    "schedule.beta_end"
                } else {
                    "schedule.steps"
                };
                r.errors.push(format!("{key}: {e}"));
            }
            if let Some(t) = t_star {
                r.check((1..=s.steps).contains(&t), || format!("conversion.t_star: {t} outside 1..={}", s.steps));
            }
            if let Some(ev) = &eval {
                for &t in &ev.t_stars {
                    r.check((1..=s.steps).contains(&t), || format!("eval.t_stars: {t} outside 1..={}", s.steps));
                }
            }
        }
        if let Some(f) = train_fraction {
            r.check(f > 0.0 && f < 1.0, || format!("data.train_fraction: {f} must be in (0, 1)"));
        }
        if let Some(res) = resolution {
            r.check(res >= 8 && res % 8 == 0, || format!("data.resolution: {res} must be a multiple of 8"));
        }
        if let (Some(spec), Some(res)) = (&synthetic, resolution) {
            if source == Some(DataSource::Synthetic) {
                if let Err(e) = (SyntheticGlyphSpec { resolution: res.max(8), ..spec.clone() }).validate() {
                    r.errors.push(format!("data.*: {e}"));
                }
            }
        }
        if let Some(p) = &ddpm {
            if let Err(e) = p.validate() {
                r.errors.push(format!("ddpm.*: {e}"));
            }
        }
        if let Some(d) = ema {
            r.check((0.0..1.0).contains(&d), || format!("ddpm.ema_decay: {d} must be in [0, 1)"));
        }
        if let (Some(c), Some(res)) = (unet_channels, resolution) {
            if let Err(e) = UNetConfig::new(res, c).validate() {
                r.errors.push(format!("ddpm.base_channels: {e}"));
            }
        }
        if let (Some((c, b, d)), Some(res)) = (conv_arch, resolution) {
            let a = ConversionArch { base_channels: c, res_blocks: b, disc_channels: d, ..ConversionArch::new(res) };
            if let Err(e) = a.validate() {
                r.errors.push(format!("conversion.base_channels: {e}"));
            }
        }
        if let Some(h) = &conversion {
            if let Err(e) = h.validate() {
                r.errors.push(format!("conversion.*: {e}"));
            }
        }
        if let Some(ev) = &eval {
            r.check(ev.k >= 1, || "eval.k: must be at least 1".into());
            r.check(ev.per_class >= 1, || "eval.per_class: must be at least 1".into());
            r.check(ev.grid_columns >= 1, || "eval.grid_columns: must be at least 1".into());
            r.check(ev.extractor.steps >= 1 && ev.extractor.batch_size >= 1 && ev.extractor.lr > 0.0, || {
                "eval.extractor_*: steps, batch size and lr must be positive".into()
            });
        }
        match source {
            Some(DataSource::Directories) => {
                r.check(hw_dir.is_some(), || "data.hw_dir: required when data.source = directories".into());
                r.check(mp_dir.is_some(), || "data.mp_dir: required when data.source = directories".into());
            }
            Some(DataSource::Emnist) => {
                r.check(emnist_images.is_some(), || "data.emnist_images: required when data.source = emnist".into());
                r.check(emnist_labels.is_some(), || "data.emnist_labels: required when data.source = emnist".into());
                r.check(mp_dir.is_some(), || "data.mp_dir: required when data.source = emnist".into());
            }
            _ => {}
        }

        if !r.errors.is_empty() {
            return Err(Error::Config(r.errors));
        }
        let (seed, resolution) = (seed.unwrap(), resolution.unwrap());
        let (c, b, d) = conv_arch.unwrap();
        Ok(RunConfig {
            seed,
            output_dir: output_dir.unwrap(),
            data: DataConfig {
                source: source.unwrap(),
                resolution,
                train_fraction: train_fraction.unwrap(),
                synthetic: SyntheticGlyphSpec { resolution, seed, ..synthetic.unwrap() },
                hw_dir,
                mp_dir,
                emnist_images,
                emnist_labels,
                emnist_transposed: emnist_transposed.unwrap(),
            },
            schedule: schedule.unwrap(),
            unet: UNetConfig::new(resolution, unet_channels.unwrap()),
            ddpm_mode: mode.unwrap(),
            ddpm: ddpm.unwrap(),
            t_star: t_star.unwrap(),
            conversion_arch: ConversionArch { base_channels: c, res_blocks: b, disc_channels: d, ..ConversionArch::new(resolution) },
            conversion: conversion.unwrap(),
            eval: eval.unwrap(),
            raw: BTreeMap::new(),
        })
    }

    pub fn extractor_arch(&self) -> ExtractorArch {
        ExtractorArch::new(self.data.resolution)
    }

    /// Every key in schema order, with its effective value. Parses back to
    /// an equal configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in SCHEMA {
            out.push_str(&format!("{} = {}\n", f.key, self.raw[f.key]));
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    /// Effective value of `key`, as written.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(String::as_str)
    }
}

/// Annotated listing of every key and its default.
pub fn render_schema() -> String {
    let mut out = String::new();
    for f in SCHEMA {
        out.push_str(&format!("# {}\n{} = {}\n", f.doc, f.key, f.default));
    }
    out
}
