//! Command-line entry point: dataset generation, training, evaluation,
//! architecture analysis, variant comparison, the placement ablation and
//! dense prediction dumps, driven by one JSON config with flag overrides.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 configuration
//! error, 3 checkpoint/model state mismatch.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tan_core::eval::EvalProtocol;
use tan_core::{TanError, Variant};

use config::{DatasetSpec, GeneratorSpec, RunConfig};

#[derive(Parser)]
#[command(name = "tan", about = "Temporal aggregation network toolkit", version)]
struct Cli {
    /// JSON run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ArchFlags {
    /// Architecture variant: tan, res3d, res2d or tan_plainconv.
    #[arg(long)]
    variant: Option<String>,
    /// Dataset directory override.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
    /// Temporal resampling factor override.
    #[arg(long)]
    factor: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk.
    Gen {
        /// Number of videos.
        #[arg(long)]
        videos: Option<usize>,
        /// Number of label classes.
        #[arg(long)]
        classes: Option<usize>,
        /// Frames per video.
        #[arg(long)]
        frames: Option<usize>,
        /// Square frame side.
        #[arg(long)]
        spatial: Option<usize>,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes a checkpoint and a CSV log.
    Train {
        #[command(flatten)]
        arch: ArchFlags,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or oracle scores) on a dataset.
    Eval {
        #[command(flatten)]
        arch: ArchFlags,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// "dense" or "sampled:N".
        #[arg(long, default_value = "sampled:25")]
        protocol: String,
        /// Score with the ground-truth labels instead of a model.
        #[arg(long)]
        oracle: bool,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Static architecture analysis: receptive fields, params, MACs.
    Analyze {
        #[command(flatten)]
        arch: ArchFlags,
        /// Probe a receptive-field axis: temporal, spatial or both.
        #[arg(long)]
        rf: Option<String>,
        /// Report parameter and MAC counts.
        #[arg(long)]
        params: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Compare variants side by side.
    Compare {
        /// Variants to compare, e.g. `tan res3d res2d`.
        #[arg(required = true)]
        variants: Vec<String>,
        #[arg(long)]
        csv: bool,
    },
    /// Temporal-aggregation placement ladder plus the plain-conv row.
    Ablate {
        #[command(flatten)]
        arch: ArchFlags,
        /// Training seeds per row (medians reported).
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        csv: bool,
        /// Also write the table to a file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump dense per-frame scores as CSV.
    Predict {
        #[command(flatten)]
        arch: ArchFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, TanError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_arch_flags(cfg: &mut RunConfig, flags: &ArchFlags) -> Result<(), TanError> {
    if let Some(v) = &flags.variant {
        cfg.variant = Variant::parse(v)?;
    }
    if let Some(d) = &flags.dataset {
        cfg.dataset = DatasetSpec::Path(d.clone());
    }
    if let Some(e) = flags.epochs {
        cfg.epochs = e;
    }
    if let Some(f) = flags.factor {
        cfg.sampling_factor = f;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), TanError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen {
            videos,
            classes,
            frames,
            spatial,
            out,
        } => {
            let mut genspec = match &cfg.dataset {
                DatasetSpec::Generator(g) => g.clone(),
                DatasetSpec::Path(_) => GeneratorSpec::default(),
            };
            if let Some(v) = videos {
                genspec.videos = v;
            }
            if let Some(c) = classes {
                genspec.classes = Some(c);
            }
            if let Some(f) = frames {
                genspec.frames = Some(f);
            }
            if let Some(s) = spatial {
                genspec.spatial = Some(s);
            }
            if let Some(seed) = cli.seed {
                genspec.seed = seed;
            }
            cfg.dataset = DatasetSpec::Generator(genspec);
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            commands::cmd_gen(&cfg, &out)
        }
        Command::Train { arch, resume, out } => {
            apply_arch_flags(&mut cfg, &arch)?;
            commands::override_output_dir(&mut cfg, out);
            commands::cmd_train(&cfg, resume.as_deref())
        }
        Command::Eval {
            arch,
            checkpoint,
            protocol,
            oracle,
            csv,
        } => {
            apply_arch_flags(&mut cfg, &arch)?;
            let protocol = EvalProtocol::parse(&protocol)?;
            commands::cmd_eval(&cfg, checkpoint.as_deref(), protocol, oracle, csv.as_deref())
        }
        Command::Analyze {
            arch,
            rf,
            params,
            csv,
        } => {
            apply_arch_flags(&mut cfg, &arch)?;
            commands::cmd_analyze(&cfg, rf.as_deref(), params, csv)
        }
        Command::Compare { variants, csv } => commands::cmd_compare(&cfg, &variants, csv),
        Command::Ablate {
            arch,
            seeds,
            csv,
            out,
        } => {
            apply_arch_flags(&mut cfg, &arch)?;
            commands::cmd_ablate(&cfg, seeds, csv, out.as_deref())
        }
        Command::Predict {
            arch,
            checkpoint,
            out,
        } => {
            apply_arch_flags(&mut cfg, &arch)?;
            commands::cmd_predict(&cfg, &checkpoint, out.as_deref())
        }
    }
}

fn exit_code(err: &TanError) -> u8 {
    match err {
        TanError::Config(_) | TanError::Manifest { .. } | TanError::Shape { .. } => 2,
        TanError::CheckpointMagic { .. }
        | TanError::CheckpointVersion { .. }
        | TanError::CheckpointTruncated { .. }
        | TanError::CheckpointUnknownParams { .. }
        | TanError::CheckpointMissingParams { .. }
        | TanError::CheckpointShapeConflict { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("TAN_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
