use clap::{Parser, Subcommand};
use du_cli::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dunet",
    about = "Diffusion-unit point cloud segmentation toolkit",
    version
)]
struct Cli {
    /// Run configuration file (key = value lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset and its manifest.
    Generate,
    /// Train on the generated dataset; writes metrics, checkpoint, summary.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint file; defaults to <out>/checkpoint.txt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the unit-switch and stage-placement sweep into ablation.csv.
    Ablate,
    /// Emit the step-edge profile, change rates, and classification.
    AnalyzeEdge,
    /// Export per-point smoothness before/after a decoder unit.
    Smoothness {
        /// Checkpoint file; defaults to <out>/checkpoint.txt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input sample: test:<i>, train:<i>, or a CSV path.
        #[arg(long)]
        sample: Option<String>,
    },
}

fn load_config(cli: &Cli) -> du_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> du_core::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate => {
            let manifest = du_cli::cmd_generate(&cfg)?;
            println!(
                "generated {} train + {} test samples ({} classes) in {}",
                manifest.train_files.len(),
                manifest.test_files.len(),
                manifest.num_classes,
                cfg.out.join("dataset").display()
            );
        }
        Command::Train => {
            let report = du_cli::cmd_train(&cfg)?;
            println!(
                "trained {} epochs: mIoU {:.4}, accuracy {:.4}; checkpoint {}",
                report.outcome.history.len(),
                report.summary.miou,
                report.summary.accuracy,
                report.checkpoint.display()
            );
        }
        Command::Eval { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint.txt"));
            let summary = du_cli::cmd_eval(&cfg, &path)?;
            println!(
                "{}",
                serde_json::to_string(&summary)
                    .unwrap_or_else(|_| "eval summary unavailable".into())
            );
        }
        Command::Ablate => {
            let path = du_cli::cmd_ablate(&cfg)?;
            println!("ablation table written to {}", path.display());
        }
        Command::AnalyzeEdge => {
            let path = du_cli::cmd_analyze_edge(&cfg)?;
            println!("edge analysis written to {}", path.display());
        }
        Command::Smoothness { checkpoint, sample } => {
            let mut cfg = cfg;
            if let Some(sample) = sample {
                cfg.smoothness_sample = du_cli::config::SampleRef::parse(&sample);
            }
            let path = checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint.txt"));
            let report = du_cli::cmd_smoothness(&cfg, &path)?;
            println!(
                "smoothness fields for stage {} written to {}",
                report.stage,
                report.csv.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
