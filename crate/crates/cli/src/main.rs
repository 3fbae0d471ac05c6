use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cycledm::batch::Direction;
use cycledm::datasets::Split;
use cycledm::Result;
use cycledm_cli::config::render_schema;
use cycledm_cli::pipeline::{self, ConvertArgs, EvaluateArgs, Method};
use cycledm_cli::RunConfig;

/// Handwritten <-> printed glyph conversion with bridged diffusion processes.
#[derive(Parser)]
#[command(name = "cycledm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` lines); defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic two-domain glyph set and its split manifests.
    SynthData,
    /// Train the conditional DDPM on both domains.
    TrainDdpm,
    /// Train F, G and both discriminators at one timestep.
    TrainConverter {
        #[arg(long)]
        ddpm: PathBuf,
        /// Defaults to `conversion.t_star`.
        #[arg(long)]
        t: Option<usize>,
    },
    /// Convert a `<LETTER>/<name>.png` directory to the other domain.
    Convert {
        #[arg(long)]
        ddpm: PathBuf,
        /// Conversion pair checkpoint (required for --method cycledm).
        #[arg(long)]
        pair: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// hw2mp or mp2hw
        #[arg(long)]
        direction: String,
        /// cycledm or sdedit
        #[arg(long, default_value = "cycledm")]
        method: String,
        /// SDEdit start step (defaults to `conversion.t_star`).
        #[arg(long)]
        t: Option<usize>,
    },
    /// Score generated target-domain images against a reference split.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        direction: String,
        /// train or test
        #[arg(long, default_value = "test")]
        reference: String,
        /// Feature extractor checkpoint; otherwise `<output_dir>/extractor.ckpt`.
        #[arg(long)]
        extractor: Option<PathBuf>,
        /// Fail instead of training a missing extractor.
        #[arg(long)]
        no_train: bool,
        /// Method label written into the report.
        #[arg(long, default_value = "cycledm")]
        method: String,
        /// Timestep label written into the report (defaults to `conversion.t_star`).
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tile image directories into a comparison grid, one row per directory.
    Grid {
        #[arg(long, required = true, num_args = 1..)]
        rows: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a recorded command from its manifest into a fresh directory.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print every configuration key with its default and description.
    Schema,
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut overrides = c.overrides.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    match &c.config {
        Some(p) => RunConfig::load(p, &overrides),
        None => RunConfig::build(None, &overrides),
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Schema => {
            print!("{}", render_schema());
            return Ok(());
        }
        Command::Replay { manifest, out } => {
            println!("{}", pipeline::replay(manifest, out)?.display());
            return Ok(());
        }
        _ => {}
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Schema | Command::Replay { .. } => unreachable!(),
        Command::SynthData => {
            let p = pipeline::cmd_synth_data(&cfg)?;
            println!("{}", p.display());
        }
        Command::TrainDdpm => {
            let p = pipeline::cmd_train_ddpm(&cfg)?;
            println!("{}", p.display());
        }
        Command::TrainConverter { ddpm, t } => {
            let p = pipeline::cmd_train_converter(&cfg, &ddpm, t.unwrap_or(cfg.t_star))?;
            println!("{}", p.display());
        }
        Command::Convert { ddpm, pair, input, out, direction, method, t } => {
            let args = ConvertArgs {
                ddpm: &ddpm,
                pair: pair.as_deref(),
                input: &input,
                output: &out,
                direction: direction.parse::<Direction>()?,
                method: method.parse::<Method>()?,
                t,
            };
            let p = pipeline::cmd_convert(&cfg, &args)?;
            println!("{}", p.display());
        }
        Command::Evaluate { generated, direction, reference, extractor, no_train, method, t, out } => {
            let args = EvaluateArgs {
                generated: &generated,
                direction: direction.parse::<Direction>()?,
                reference: reference.parse::<Split>()?,
                extractor: extractor.as_deref(),
                no_train,
                method: &method,
                t: t.unwrap_or(cfg.t_star),
                output: &out,
            };
            let r = pipeline::cmd_evaluate(&cfg, &args)?;
            print!("{}", cycledm::evaluation::render_table(&[r]));
        }
        Command::Grid { rows, out } => {
            let p = pipeline::cmd_grid(&cfg, &rows, &out)?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
