//! `topogbm` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 I/O or
//! file-format error, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use topogbm::topology::FiltrationMode;
use topogbm::Error;

#[derive(Parser)]
#[command(name = "topogbm", version, about = "Topology-regularized survival modelling from multi-modal 3D MRI")]
struct Cli {
    /// Config file: a JSON object or `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set stage2.lr=1e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sublevel,
    Superlevel,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom cohort (NIfTI volumes, masks, manifest).
    Phantom {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train encoder, decoder and hazard head on the joint objective.
    TrainStage1 {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a `stage1_state.tgv` file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the survival head on frozen embeddings.
    TrainStage2 {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Risk predictions, C-index, Kaplan-Meier strata and reconstruction tables.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occlusion attribution over tumor, peri-tumoral rings and normal tissue.
    Attribute {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `train`, `val`, `test` or `all`.
        #[arg(long, default_value = "all")]
        split: String,
        /// Attribute at most this many patients.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Persistence diagram of a NIfTI volume, or input-slice and latent-grid
    /// diagrams for a cohort.
    Persistence {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sublevel")]
        mode: Mode,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        stage1: Option<PathBuf>,
        /// CSV file for `--input`, directory otherwise.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the embedding harmonization on the training split.
    Harmonize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::NonFiniteInput => 3,
        Error::Io(_)
        | Error::Csv(_)
        | Error::Checkpoint(_)
        | Error::BadMagic(_)
        | Error::UnsupportedDatatype(_)
        | Error::TruncatedData { .. }
        | Error::BadHeader(_)
        | Error::BadRank(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> topogbm::Result<()> {
    let cfg = config::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Phantom { out } => commands::phantom(&cfg, &out),
        Command::TrainStage1 { manifest, out, resume } => commands::train_stage1(&cfg, &manifest, &out, resume.as_deref()),
        Command::TrainStage2 { manifest, stage1, out } => commands::train_stage2(&cfg, &manifest, &stage1, &out),
        Command::Eval { manifest, stage1, head, pca, out } => commands::eval(&cfg, &manifest, &stage1, &head, pca.as_deref(), &out),
        Command::Attribute { manifest, stage1, head, pca, out, split, limit } => {
            commands::attribute(&cfg, &manifest, &stage1, &head, pca.as_deref(), &out, &split, limit)
        }
        Command::Persistence { input, mode, manifest, stage1, out } => {
            let mode = match mode {
                Mode::Sublevel => FiltrationMode::Sublevel,
                Mode::Superlevel => FiltrationMode::Superlevel,
            };
            commands::persistence(&cfg, input.as_deref(), mode, manifest.as_deref(), stage1.as_deref(), &out)
        }
        Command::Harmonize { manifest, stage1, out } => commands::harmonize(&cfg, &manifest, &stage1, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
