//! One function per subcommand. Each owns its output directory for the
//! duration of the call (lock file) and leaves behind the effective config
//! (`run.cfg`) and a `<command>.manifest.json` with input and output hashes.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cycledm::batch::{unit_to_byte, Direction, Domain, ImageBatch};
use cycledm::conversion::{convert, sdedit_convert, train_conversion, ConversionPair};
use cycledm::datasets::{
    generate_synthetic_domains, load_emnist_letters, load_image_directory, render_manifest, save_image_directory,
    split_dataset, DomainDataset, GlyphItem, Split,
};
use cycledm::diffusion::{train_ddpm, Ddpm, NoiseSchedule};
use cycledm::evaluation::{
    evaluate_generated, render_table, reports_to_json, save_grid, train_feature_extractor, EvalContext, EvalReport,
    FeatureExtractor,
};
use cycledm::rng::{sha256_hex, stream_for};
use cycledm::{Error, Result};
use serde_json::json;

use crate::config::{DataSource, RunConfig};

pub const LOCK_FILE: &str = ".cycledm.lock";
pub const DDPM_FILE: &str = "ddpm.ckpt";
pub const EXTRACTOR_FILE: &str = "extractor.ckpt";
const CONVERT_CHUNK: usize = 64;

pub fn pair_file(t_star: usize) -> String {
    format!("pair_t{t_star}.ckpt")
}

/// Exclusive claim on a run directory, released on drop.
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<RunDir> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(RunDir { path: path.to_path_buf() }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                path.display(),
                lock.display()
            ))),
            Err(e) => Err(Error::io(&lock, e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `run.cfg` and `<command>.manifest.json` into `dir`.
pub fn write_manifest(
    dir: &RunDir,
    command: &str,
    cfg: &RunConfig,
    args: serde_json::Value,
    inputs: serde_json::Value,
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    write(&dir.join("run.cfg"), cfg.to_text())?;
    let mut hashes = serde_json::Map::new();
    for p in outputs {
        let name = p.strip_prefix(dir.path()).unwrap_or(p).display().to_string();
        hashes.insert(name, json!(file_sha256(p)?));
    }
    let manifest = json!({
        "command": command,
        "code_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_sha256": cfg.hash(),
        "config": cfg.to_text(),
        "args": args,
        "inputs": inputs,
        "outputs": hashes,
    });
    let path = dir.join(&format!("{command}.manifest.json"));
    write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n")?;
    Ok(path)
}

/// Stratified train/test splits of both domains.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub hw_train: DomainDataset,
    pub hw_test: DomainDataset,
    pub mp_train: DomainDataset,
    pub mp_test: DomainDataset,
}

impl Datasets {
    pub fn get(&self, domain: Domain, split: Split) -> Result<&DomainDataset> {
        match (domain, split) {
            (Domain::Handwritten, Split::Train) => Ok(&self.hw_train),
            (Domain::Handwritten, Split::Test) => Ok(&self.hw_test),
            (Domain::Printed, Split::Train) => Ok(&self.mp_train),
            (Domain::Printed, Split::Test) => Ok(&self.mp_test),
            (_, Split::All) => Err(Error::InvalidArgument("expected the train or test split".into())),
        }
    }

    /// Rendered manifests of all four splits, keyed by `<domain>_<split>`.
    pub fn manifests(&self) -> Result<Vec<(String, String)>> {
        [&self.hw_train, &self.hw_test, &self.mp_train, &self.mp_test]
            .iter()
            .map(|d| Ok((format!("{}_{}", d.domain, d.split), render_manifest(d)?)))
            .collect()
    }

    fn input_hashes(&self) -> Result<serde_json::Value> {
        let mut m = serde_json::Map::new();
        for (name, text) in self.manifests()? {
            m.insert(format!("data:{name}"), json!(sha256_hex(text.as_bytes())));
        }
        Ok(serde_json::Value::Object(m))
    }
}

fn load_domain(dir: &Path, domain: Domain, res: usize) -> Result<DomainDataset> {
    let l = load_image_directory(dir, domain, res)?;
    if !l.skipped.is_empty() {
        log::warn!("{}: skipped {} unreadable file(s)", dir.display(), l.skipped.len());
    }
    Ok(l.dataset)
}

/// Builds both domains from the configured source and splits them with the
/// root seed.
pub fn prepare_data(cfg: &RunConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let (hw, mp) = match d.source {
        DataSource::Synthetic => generate_synthetic_domains(&d.synthetic)?,
        DataSource::Directories => (
            load_domain(d.hw_dir.as_deref().expect("validated"), Domain::Handwritten, d.resolution)?,
            load_domain(d.mp_dir.as_deref().expect("validated"), Domain::Printed, d.resolution)?,
        ),
        DataSource::Emnist => (
            load_emnist_letters(
                d.emnist_images.as_deref().expect("validated"),
                d.emnist_labels.as_deref().expect("validated"),
                d.emnist_transposed,
                d.resolution,
            )?,
            load_domain(d.mp_dir.as_deref().expect("validated"), Domain::Printed, d.resolution)?,
        ),
    };
    let (hw_train, hw_test) = split_dataset(&hw, d.train_fraction, cfg.seed)?;
    let (mp_train, mp_test) = split_dataset(&mp, d.train_fraction, cfg.seed)?;
    Ok(Datasets { hw_train, hw_test, mp_train, mp_test })
}

/// Writes `data/<domain>/<split>/<LETTER>/<name>.png` (splits `all`, `train`,
/// `test`) and a text manifest per split.
pub fn cmd_synth_data(cfg: &RunConfig) -> Result<PathBuf> {
    if cfg.data.source != DataSource::Synthetic {
        return Err(Error::InvalidArgument("synth-data needs data.source = synthetic".into()));
    }
    let run = RunDir::open(&cfg.output_dir)?;
    let root = run.join("data");
    let (hw, mp) = generate_synthetic_domains(&cfg.data.synthetic)?;
    let data = prepare_data(cfg)?;
    let mut outputs = Vec::new();
    for ds in [&hw, &mp, &data.hw_train, &data.hw_test, &data.mp_train, &data.mp_test] {
        let dir = root.join(ds.domain.tag()).join(ds.split.to_string());
        save_image_directory(ds, &dir)?;
        let m = root.join(format!("{}_{}.manifest.txt", ds.domain, ds.split));
        write(&m, render_manifest(ds)?)?;
        outputs.push(m);
    }
    write_manifest(&run, "synth-data", cfg, json!({}), json!({}), &outputs)?;
    Ok(root)
}

pub fn cmd_train_ddpm(cfg: &RunConfig) -> Result<PathBuf> {
    let run = RunDir::open(&cfg.output_dir)?;
    let data = prepare_data(cfg)?;
    let schedule = NoiseSchedule::from_params(&cfg.schedule)?;
    let (hw, mp) = (data.hw_train.to_batch()?, data.mp_train.to_batch()?);
    let (model, log) = train_ddpm(&hw, &mp, &schedule, &cfg.unet, cfg.ddpm_mode, &cfg.ddpm, cfg.seed, |_, _| {})?;
    let ckpt = run.join(DDPM_FILE);
    model.save(&ckpt)?;
    let curve = run.join("ddpm_loss.json");
    write(&curve, serde_json::to_string(&json!({ "losses": log.losses, "smoothed_100": log.smoothed(100) })).expect("json"))?;
    write_manifest(&run, "train-ddpm", cfg, json!({}), data.input_hashes()?, &[ckpt.clone(), curve])?;
    Ok(ckpt)
}

fn check_ddpm_against_config(ddpm: &Ddpm, cfg: &RunConfig) -> Result<()> {
    if ddpm.schedule().params() != cfg.schedule {
        return Err(Error::Incompatible(format!(
            "DDPM was trained with schedule {:?}, config says {:?}",
            ddpm.schedule().params(),
            cfg.schedule
        )));
    }
    if ddpm.resolution() != cfg.data.resolution {
        return Err(Error::Incompatible(format!(
            "DDPM resolution {} differs from data.resolution {}",
            ddpm.resolution(),
            cfg.data.resolution
        )));
    }
    Ok(())
}

pub fn cmd_train_converter(cfg: &RunConfig, ddpm_path: &Path, t_star: usize) -> Result<PathBuf> {
    if !(1..=cfg.schedule.steps).contains(&t_star) {
        return Err(Error::InvalidArgument(format!("t_star {t_star} outside 1..={}", cfg.schedule.steps)));
    }
    let ddpm = Ddpm::load(ddpm_path)?;
    check_ddpm_against_config(&ddpm, cfg)?;
    let run = RunDir::open(&cfg.output_dir)?;
    let data = prepare_data(cfg)?;
    let (hw, mp) = (data.hw_train.to_batch()?, data.mp_train.to_batch()?);
    let (pair, log) =
        train_conversion(&ddpm, &hw, &mp, t_star, &cfg.conversion_arch, &cfg.conversion, cfg.seed, |_, _, _| {})?;
    let ckpt = run.join(&pair_file(t_star));
    pair.save(&ckpt)?;
    let curve = run.join(&format!("conversion_loss_t{t_star}.json"));
    write(&curve, serde_json::to_string(&json!({ "generator": log.generator, "discriminator": log.discriminator })).expect("json"))?;
    let mut inputs = data.input_hashes()?;
    inputs["ddpm"] = json!(file_sha256(ddpm_path)?);
    let args = json!({ "t_star": t_star, "ddpm": ddpm_path.display().to_string() });
    write_manifest(&run, &format!("train-converter-t{t_star}"), cfg, args, inputs, &[ckpt.clone(), curve])?;
    Ok(ckpt)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    CycleDm,
    Sdedit,
}

impl Method {
    pub fn id(self) -> &'static str {
        match self {
            Method::CycleDm => "cycledm",
            Method::Sdedit => "sdedit",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycledm" => Ok(Method::CycleDm),
            "sdedit" => Ok(Method::Sdedit),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}` (cycledm or sdedit)"))),
        }
    }
}

/// Converts `x` in chunks with one RNG stream, so results do not depend on
/// how callers batch their inputs.
pub fn convert_batch(
    x: &ImageBatch,
    direction: Direction,
    method: Method,
    t: usize,
    ddpm: &Ddpm,
    pair: Option<&ConversionPair>,
    seed: u64,
) -> Result<ImageBatch> {
    let mut rng = stream_for(seed, &format!("convert/{direction}/{}/{t}", method.id()));
    let mut parts = Vec::new();
    for start in (0..x.len()).step_by(CONVERT_CHUNK) {
        let chunk = x.slice(start, CONVERT_CHUNK.min(x.len() - start));
        parts.push(match method {
            Method::CycleDm => {
                let pair = pair.ok_or_else(|| Error::InvalidArgument("cycledm conversion needs a converter checkpoint".into()))?;
                convert(&chunk, direction, t, pair, ddpm, &mut rng)?
            }
            Method::Sdedit => sdedit_convert(&chunk, direction, t, ddpm, &mut rng)?,
        });
    }
    if parts.is_empty() {
        return Err(Error::Data("nothing to convert".into()));
    }
    ImageBatch::concat(&parts)
}

fn to_dataset(b: &ImageBatch, like: &DomainDataset) -> DomainDataset {
    let items = (0..b.len())
        .map(|i| GlyphItem {
            pixels: b.image(i).iter().map(|&v| unit_to_byte(v)).collect(),
            class: b.classes()[i],
            name: like.items[i].name.clone(),
        })
        .collect();
    DomainDataset { domain: b.domain(), resolution: like.resolution, items, split: like.split, provenance: "converted".into() }
}

pub struct ConvertArgs<'a> {
    pub ddpm: &'a Path,
    pub pair: Option<&'a Path>,
    pub input: &'a Path,
    pub output: &'a Path,
    pub direction: Direction,
    pub method: Method,
    /// SDEdit start step; CycleDM uses the pair's step and rejects others.
    pub t: Option<usize>,
}

/// One output PNG per input (same class directory and name) plus `grid.png`
/// with the inputs on the first row and the outputs on the second.
pub fn cmd_convert(cfg: &RunConfig, a: &ConvertArgs<'_>) -> Result<PathBuf> {
    let ddpm = Ddpm::load(a.ddpm)?;
    check_ddpm_against_config(&ddpm, cfg)?;
    let pair = match (a.method, a.pair) {
        (Method::CycleDm, Some(p)) => Some(ConversionPair::load(p)?),
        (Method::CycleDm, None) => return Err(Error::InvalidArgument("--method cycledm needs --pair".into())),
        (Method::Sdedit, _) => None,
    };
    let t = match (&pair, a.t) {
        (Some(p), Some(t)) if t != p.t_star() => {
            return Err(Error::Incompatible(format!("pair was trained for t = {}, --t asks for {t}", p.t_star())))
        }
        (Some(p), _) => p.t_star(),
        (None, t) => t.unwrap_or(cfg.t_star),
    };
    let input = load_domain(a.input, a.direction.source(), cfg.data.resolution)?;
    let run = RunDir::open(a.output)?;
    let x = input.to_batch()?;
    let y = convert_batch(&x, a.direction, a.method, t, &ddpm, pair.as_ref(), cfg.seed)?;
    let out = to_dataset(&y, &input);
    save_image_directory(&out, run.path())?;
    let grid = run.join("grid.png");
    save_grid(&[&x, &y], cfg.eval.grid_columns, &grid)?;
    let mut outputs: Vec<PathBuf> = out
        .items
        .iter()
        .map(|it| run.path().join(cycledm::batch::class_letter(it.class).to_string()).join(format!("{}.png", it.name)))
        .collect();
    outputs.push(grid);
    let mut inputs = json!({ "ddpm": file_sha256(a.ddpm)?, "input": sha256_hex(render_manifest(&input)?.as_bytes()) });
    if let Some(p) = a.pair {
        inputs["pair"] = json!(file_sha256(p)?);
    }
    let args = json!({
        "direction": a.direction.to_string(),
        "method": a.method.id(),
        "t": t,
        "ddpm": a.ddpm.display().to_string(),
        "pair": a.pair.map(|p| p.display().to_string()),
        "input": a.input.display().to_string(),
    });
    write_manifest(&run, "convert", cfg, args, inputs, &outputs)?;
    Ok(run.path().to_path_buf())
}

/// Loads the extractor from `path`, else from the run directory, else trains
/// one on the training splits (unless `no_train`). Returns the model and the
/// checkpoint it now lives in.
pub fn obtain_extractor(
    cfg: &RunConfig,
    data: &Datasets,
    path: Option<&Path>,
    no_train: bool,
) -> Result<(FeatureExtractor, PathBuf)> {
    if let Some(p) = path {
        return Ok((FeatureExtractor::load(p)?, p.to_path_buf()));
    }
    let cached = cfg.output_dir.join(EXTRACTOR_FILE);
    if cached.exists() {
        return Ok((FeatureExtractor::load(&cached)?, cached));
    }
    if no_train {
        return Err(Error::InvalidArgument(format!(
            "no feature extractor at {} and --no-train was given",
            cached.display()
        )));
    }
    let batches = [data.hw_train.to_batch()?, data.mp_train.to_batch()?];
    let held = [data.hw_test.to_batch()?, data.mp_test.to_batch()?];
    let (model, _) = train_feature_extractor(
        &[&batches[0], &batches[1]],
        &[&held[0], &held[1]],
        &cfg.extractor_arch(),
        &cfg.eval.extractor,
        cfg.seed,
    )?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    model.save(&cached)?;
    Ok((model, cached))
}

pub struct EvaluateArgs<'a> {
    pub generated: &'a Path,
    pub direction: Direction,
    pub reference: Split,
    pub extractor: Option<&'a Path>,
    pub no_train: bool,
    pub method: &'a str,
    pub t: usize,
    pub output: &'a Path,
}

/// Scores a directory of generated target-domain images against the
/// configured reference split. Writes `report.json` and `report.txt`.
pub fn cmd_evaluate(cfg: &RunConfig, a: &EvaluateArgs<'_>) -> Result<EvalReport> {
    let data = prepare_data(cfg)?;
    let target = a.direction.target();
    let reference = data.get(target, a.reference)?.to_batch()?;
    let generated = load_domain(a.generated, target, cfg.data.resolution)?;
    if generated.is_empty() {
        return Err(Error::Data(format!("{} holds no generated images", a.generated.display())));
    }
    let (extractor, extractor_path) = obtain_extractor(cfg, &data, a.extractor, a.no_train)?;
    let run = RunDir::open(a.output)?;
    let ctx = EvalContext { extractor: &extractor, target_test: &reference, k: cfg.eval.k };
    let report = evaluate_generated(&ctx, &generated.to_batch()?, a.direction, a.method, a.t, vec![cfg.seed])?;
    let (json_path, txt_path) = (run.join("report.json"), run.join("report.txt"));
    write(&json_path, reports_to_json(std::slice::from_ref(&report)) + "\n")?;
    write(&txt_path, render_table(std::slice::from_ref(&report)))?;
    let mut inputs = data.input_hashes()?;
    inputs["generated"] = json!(sha256_hex(render_manifest(&generated)?.as_bytes()));
    inputs["extractor"] = json!(extractor.fingerprint());
    let args = json!({
        "direction": a.direction.to_string(),
        "reference": a.reference.to_string(),
        "method": a.method,
        "t": a.t,
        "generated": a.generated.display().to_string(),
        "extractor": extractor_path.display().to_string(),
    });
    write_manifest(&run, "evaluate", cfg, args, inputs, &[json_path, txt_path])?;
    Ok(report)
}

/// One grid row per directory, in the given order.
pub fn cmd_grid(cfg: &RunConfig, rows: &[PathBuf], output: &Path) -> Result<PathBuf> {
    let batches: Vec<ImageBatch> = rows
        .iter()
        .map(|d| load_domain(d, Domain::Printed, cfg.data.resolution)?.to_batch())
        .collect::<Result<_>>()?;
    let refs: Vec<&ImageBatch> = batches.iter().collect();
    let parent = output.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let run = RunDir::open(parent)?;
    save_grid(&refs, cfg.eval.grid_columns, output)?;
    let mut inputs = serde_json::Map::new();
    for (i, b) in batches.iter().enumerate() {
        let bytes: Vec<u8> = b.pixels().data().iter().map(|&v| unit_to_byte(v)).collect();
        inputs.insert(format!("row{i}"), json!(sha256_hex(&bytes)));
    }
    let args = json!({
        "rows": rows.iter().map(|r| r.display().to_string()).collect::<Vec<_>>(),
        "output": output.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    write_manifest(&run, "grid", cfg, args, serde_json::Value::Object(inputs), &[output.to_path_buf()])?;
    Ok(output.to_path_buf())
}

fn arg_str<'a>(args: &'a serde_json::Value, key: &str) -> Result<&'a str> {
    args[key].as_str().ok_or_else(|| Error::InvalidArgument(format!("manifest args lack `{key}`")))
}

fn arg_usize(args: &serde_json::Value, key: &str) -> Result<usize> {
    args[key]
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::InvalidArgument(format!("manifest args lack `{key}`")))
}

/// Re-runs the command recorded in `manifest` with its recorded config and
/// arguments, writing into `out` instead of the original location. Returns
/// the new manifest.
pub fn replay(manifest: &Path, out: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: not a run manifest: {e}", manifest.display())))?;
    let command = m["command"].as_str().ok_or_else(|| Error::InvalidArgument("manifest lacks `command`".into()))?;
    let config = m["config"].as_str().ok_or_else(|| Error::InvalidArgument("manifest lacks `config`".into()))?;
    let cfg = RunConfig::build(Some((config, &manifest.display().to_string())), &[format!("output_dir={}", out.display())])?;
    let args = &m["args"];
    let dir = match command {
        "synth-data" => {
            cmd_synth_data(&cfg)?;
            out.to_path_buf()
        }
        "train-ddpm" => {
            cmd_train_ddpm(&cfg)?;
            out.to_path_buf()
        }
        c if c.starts_with("train-converter-t") => {
            cmd_train_converter(&cfg, Path::new(arg_str(args, "ddpm")?), arg_usize(args, "t_star")?)?;
            out.to_path_buf()
        }
        "convert" => {
            let pair = args["pair"].as_str().map(PathBuf::from);
            cmd_convert(
                &cfg,
                &ConvertArgs {
                    ddpm: Path::new(arg_str(args, "ddpm")?),
                    pair: pair.as_deref(),
                    input: Path::new(arg_str(args, "input")?),
                    output: out,
                    direction: arg_str(args, "direction")?.parse()?,
                    method: arg_str(args, "method")?.parse()?,
                    t: Some(arg_usize(args, "t")?),
                },
            )?
        }
        "evaluate" => {
            cmd_evaluate(
                &cfg,
                &EvaluateArgs {
                    generated: Path::new(arg_str(args, "generated")?),
                    direction: arg_str(args, "direction")?.parse()?,
                    reference: arg_str(args, "reference")?.parse()?,
                    extractor: Some(Path::new(arg_str(args, "extractor")?)),
                    no_train: true,
                    method: arg_str(args, "method")?,
                    t: arg_usize(args, "t")?,
                    output: out,
                },
            )?;
            out.to_path_buf()
        }
        "grid" => {
            let rows: Vec<PathBuf> = args["rows"]
                .as_array()
                .ok_or_else(|| Error::InvalidArgument("manifest args lack `rows`".into()))?
                .iter()
                .filter_map(|v| v.as_str().map(PathBuf::from))
                .collect();
            cmd_grid(&cfg, &rows, &out.join(arg_str(args, "output")?))?;
            out.to_path_buf()
        }
        other => return Err(Error::InvalidArgument(format!("cannot replay unknown command `{other}`"))),
    };
    Ok(dir.join(format!("{command}.manifest.json")))
}
