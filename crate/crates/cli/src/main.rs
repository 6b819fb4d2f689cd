use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod configs;

#[derive(Parser)]
#[command(name = "pfml", version, about = "Self-supervised pre-training for time series by predicting functionals of masked frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Pfml,
    Mae,
}

#[derive(Clone, Copy, ValueEnum)]
enum LocationArg {
    Embeddings,
    Inputs,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    Synth(Common),
    /// Compute the functional store of every frame in a manifest.
    ExtractFunctionals(Common),
    /// Pre-train a backbone by masked prediction.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        #[arg(long, value_enum)]
        mask_location: Option<LocationArg>,
        /// Continue from `last.pfck` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Fine-tune a classifier, from a pre-trained checkpoint or from scratch.
    Finetune(Common),
    /// Train a linear probe on a frozen backbone.
    Probe(Common),
    /// Score a fine-tuned checkpoint on a labeled manifest.
    Eval(Common),
    /// Re-apply the collapse rule to a pre-training log.
    CollapseReport {
        /// Pre-training `log.csv`.
        #[arg(long)]
        log: PathBuf,
        /// Optional JSON with `threshold` and `window`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(c) => commands::synth(&c.config, &c.out, c.seed),
        Command::ExtractFunctionals(c) => commands::extract_functionals(&c.config, &c.out),
        Command::Pretrain {
            common: c,
            objective,
            mask_location,
            resume,
        } => {
            let objective = objective.map(|o| match o {
                ObjectiveArg::Pfml => pfml_core::pretrain::Objective::Pfml,
                ObjectiveArg::Mae => pfml_core::pretrain::Objective::Mae,
            });
            let location = mask_location.map(|l| match l {
                LocationArg::Embeddings => pfml_core::masking::MaskLocation::Embeddings,
                LocationArg::Inputs => pfml_core::masking::MaskLocation::Inputs,
            });
            commands::pretrain(&c.config, &c.out, c.seed, objective, location, resume)
        }
        Command::Finetune(c) => commands::finetune(&c.config, &c.out, c.seed),
        Command::Probe(c) => commands::probe(&c.config, &c.out, c.seed),
        Command::Eval(c) => commands::eval(&c.config, &c.out),
        Command::CollapseReport { log, config, out } => commands::collapse_report(&log, config.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
