//! Command-line driver: synthetic data generation, fusion, feature
//! extraction, meta-classifier training, evaluation and fine-tuning.
//!
//! Exit codes: 0 on success, 2 for validation/format errors, 3 for I/O
//! failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::SynthConfig;

fn synth_help() -> String {
    format!(
        "Default configuration (all fields overridable via --config):\n{}",
        config::pretty_json(&SynthConfig::default())
    )
}

fn train_help() -> String {
    format!(
        "Default training configuration:\n{}",
        config::pretty_json(&segfuse_core::meta::TrainConfig::default())
    )
}

#[derive(Parser)]
#[command(
    name = "segfuse",
    version,
    about = "Post-processes semantic segmentation outputs: fuses them with a \
             foreground-probability map, prunes false-positive segments with a \
             boosted meta classifier, and evaluates segment-level detection."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset (tensors + manifest).
    #[command(after_help = synth_help())]
    Synth {
        /// JSON run configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for tensors and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured scene count.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Fuse each image's class probabilities with its foreground map and
    /// write the fused and background-filled label maps.
    Fuse {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional schema JSON overriding the manifest's schema.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Extract the structured segment dataset (features + adjusted IoU) as CSV.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the semantic-only prediction instead of the fused one.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Train the gradient-boosted meta classifier on a segment CSV with
    /// 5-fold cross-validation.
    #[command(name = "train-meta", after_help = train_help())]
    TrainMeta {
        /// Segment dataset written by `features`.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON training configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a manifest with a trained model: threshold curve, summary
    /// metrics, AUROC, mIoU and per-class breakdowns.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Model JSON written by `train-meta` or `finetune`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate the semantic-only prediction instead of the fused one.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Retrain the meta classifier with an image-level fraction of a target
    /// dataset and evaluate on the held-out remainder.
    Finetune {
        /// Source-domain segment CSV.
        #[arg(long = "source-csv")]
        source_csv: PathBuf,
        /// Target-domain manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Fraction of target images used for retraining, in (0, 1).
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the image-level split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train on the target fraction alone instead of source + target.
        #[arg(long)]
        target_only: bool,
    },
    /// Pretty-print a metrics report; optionally re-export its curve CSV.
    Report {
        /// Metrics JSON written by `eval` or `finetune`.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> segfuse_core::Result<()> {
    match cli.command {
        Command::Synth { config, out, seed, scenes } => {
            commands::cmd_synth(config.as_deref(), &out, seed, scenes)
        }
        Command::Fuse { manifest, out, schema } => {
            commands::cmd_fuse(&manifest, &out, schema.as_deref())
        }
        Command::Features { manifest, out, baseline, schema } => {
            commands::cmd_features(&manifest, &out, baseline, schema.as_deref())
        }
        Command::TrainMeta { csv, out, config, seed } => {
            commands::cmd_train_meta(&csv, &out, config.as_deref(), seed)
        }
        Command::Eval { manifest, model, out, baseline, schema } => {
            commands::cmd_eval(&manifest, &model, &out, baseline, schema.as_deref())
        }
        Command::Finetune { source_csv, manifest, fraction, out, config, seed, target_only } => {
            commands::cmd_finetune(
                &source_csv,
                &manifest,
                fraction,
                &out,
                config.as_deref(),
                seed,
                target_only,
            )
        }
        Command::Report { metrics, out } => commands::cmd_report(&metrics, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
