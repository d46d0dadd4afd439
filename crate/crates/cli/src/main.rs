//! Command-line interface for the training pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use factgate::config::RunConfig;
use factgate::harness;

#[derive(Parser)]
#[command(
    name = "factgate",
    about = "Fact-gated policy optimization on synthetic visual scenes",
    version
)]
struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "factgate.toml")]
    config: PathBuf,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the reward fusion strategy
    /// (vanilla | visual-gate | visual-bonus | visual-mix).
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Override the judge backend (oracle | remote).
    #[arg(long, global = true)]
    judge: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the augmented dataset, holdout set, and manifest.
    GenData,
    /// Train a policy on the generated dataset.
    Train {
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset or holdout file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation set; defaults to the run's holdout file.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train all four reward strategies under a shared seed and compare.
    Ablate,
    /// Render a Markdown report from ablation outputs.
    Report,
}

fn run(cli: Cli) -> factgate::Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.apply_overrides(cli.seed, cli.strategy.as_deref(), cli.judge.as_deref())?;

    match cli.command {
        Command::GenData => {
            let out = harness::cmd_gen_data(&cfg)?;
            println!(
                "wrote {} ({} kept, {} rejected), {}, {}",
                out.dataset_path.display(),
                out.kept,
                out.rejected,
                out.holdout_path.display(),
                out.manifest_path.display()
            );
        }
        Command::Train { resume } => {
            let out = harness::cmd_train(&cfg, resume.as_deref())?;
            println!(
                "trained {} steps; metrics {}, checkpoint {}",
                out.steps_run,
                out.metrics_path.display(),
                out.checkpoint_path.display()
            );
            if let Some(last) = out.final_record {
                println!(
                    "final: accuracy {:.3}, hallucination {:.3}, mean length {:.1}",
                    last.holdout_accuracy, last.hallucination_rate, last.mean_response_len
                );
            }
        }
        Command::Eval { checkpoint, dataset } => {
            let default_set = harness::RunPaths::new(&cfg.paths.out_dir).holdout();
            let dataset = dataset.unwrap_or(default_set);
            let report = harness::cmd_eval(&cfg, &checkpoint, &dataset)?;
            println!(
                "{} samples: accuracy {:.3}, hallucination {:.3}",
                report.n_samples, report.accuracy, report.hallucination_rate
            );
            for d in &report.per_domain {
                println!(
                    "  {:<12} n={:<4} accuracy {:.3} hallucination {:.3}",
                    d.domain, d.n, d.accuracy, d.hallucination_rate
                );
            }
        }
        Command::Ablate => {
            let out = harness::cmd_ablate(&cfg)?;
            println!("summary {}", out.summary_path.display());
            for row in &out.rows {
                println!(
                    "  {:<13} accuracy {:.3} hallucination {:.3} length {:.1}",
                    row.strategy,
                    row.final_accuracy,
                    row.final_hallucination_rate,
                    row.mean_len_final_quartile
                );
            }
        }
        Command::Report => {
            let report = harness::cmd_report(&cfg)?;
            println!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
