mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{Source, TeleInput};
use config::RunConfig;

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "teledepth", version, about = "Full-FoV depth from a wide image and tele depth")]
struct Cli {
    /// key = value run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel stereo kernels
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the three-stage hierarchy and write a checkpoint
    Train {
        /// Dataset root (`<id>_rgb.ppm`, `<id>_depth.pfm`)
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
        /// Per-epoch loss CSV (default: next to the checkpoint)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict initial, propagated and final depth for one image
    Infer {
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long, conflicts_with = "tele_pair", required_unless_present = "tele_pair")]
        tele_depth: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["LEFT", "RIGHT"])]
        tele_pair: Option<Vec<PathBuf>>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Per-sample and mean metrics of every stage
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Correlation of every pixel with the centre pixel across a dataset
    Correlate {
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<usize>,
        /// Resize target as WIDTHxHEIGHT
        #[arg(long, value_parser = parse_dims)]
        resize: Option<(usize, usize)>,
        /// Centred crop as WIDTHxHEIGHT
        #[arg(long, value_parser = parse_dims)]
        crop: Option<(usize, usize)>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Disparity and log depth from a rectified pair
    Stereo {
        left: PathBuf,
        right: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(w)?, p(h)?))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<teledepth::Error>() {
            return match e {
                teledepth::Error::Usage(_) => 2,
                teledepth::Error::Checkpoint(_) => 3,
                teledepth::Error::Dimension(_) | teledepth::Error::Domain(_) | teledepth::Error::Io { .. } => 4,
                teledepth::Error::Training { .. } => 5,
            };
        }
    }
    1
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        config
            .apply_text(&text)
            .map_err(|e| UsageError(format!("{}: {e:#}", path.display())))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Train { data, synthetic, epochs, out, log } => {
            if let Some(e) = epochs {
                config.epochs = e;
            }
            let source = Source::resolve(&config, data, synthetic)?;
            commands::train(&config, &source, &out, log)
        }
        Command::Infer { checkpoint, image, tele_depth, tele_pair, out } => {
            let tele = match (tele_depth, tele_pair) {
                (Some(d), _) => TeleInput::Depth(d),
                (None, Some(pair)) => TeleInput::Pair(pair[0].clone(), pair[1].clone()),
                (None, None) => unreachable!("clap requires one of them"),
            };
            commands::infer(&config, &checkpoint, &image, tele, &out)
        }
        Command::Eval { checkpoint, data, synthetic, out, oracle } => {
            let source = Source::resolve(&config, data, synthetic)?;
            commands::eval(&config, checkpoint.as_deref(), &source, &out, oracle)
        }
        Command::Correlate { data, synthetic, resize, crop, out } => {
            if let Some((w, h)) = resize {
                (config.resize_width, config.resize_height) = (w, h);
            }
            if let Some((w, h)) = crop {
                (config.corr_crop_width, config.corr_crop_height) = (w, h);
            }
            let source = Source::resolve(&config, data, synthetic)?;
            commands::correlate(&config, &source, &out)
        }
        Command::Stereo { left, right, out } => commands::stereo(&config, &left, &right, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
