use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use avfulldit::config::ExperimentConfig;
use avfulldit::error::Error;
use avfulldit::harness::{cmd_ablate, cmd_compare, cmd_sample, cmd_train};
use avfulldit::verify::{render, run_all, Mutation};

#[derive(Parser)]
#[command(name = "avfd", version, about = "Audio-video joint diffusion at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model (joint or single-modality per config)
    Train(RunArgs),
    /// Train matched twins under identical settings and emit a side-by-side report
    Compare(RunArgs),
    /// Sample clips from a saved checkpoint and score them
    Sample(RunArgs),
    /// Run the variant grid, one training run per feasible cell
    Ablate(RunArgs),
    /// Run the invariant suite and print one status line per check
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config, flat `key = value` text
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Override train.seed, data.seed, and infer.seed together
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Also write the listing to <out>/verify_report.txt
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plant the named defect first; the suite must then report a failure
    #[arg(long)]
    mutate: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Io { .. } => 4,
                _ => 3,
            })
        }
    }
}

fn dispatch(cli: Cli) -> avfulldit::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let arts = cmd_train(&cfg, &args.out)?;
            println!("run directory: {}", arts.dir.display());
            println!(
                "train loss: {:?} -> {:?} over {} steps",
                arts.initial_loss, arts.final_loss, cfg.train.steps
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(args) => {
            let cfg = load_config(&args)?;
            let report = cmd_compare(&cfg, &args.out)?;
            println!("comparison report: {}", report.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sample(args) => {
            let cfg = load_config(&args)?;
            let report = cmd_sample(&cfg, &args.out)?;
            println!("sample report: {}", report.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate(args) => {
            let cfg = load_config(&args)?;
            let report = cmd_ablate(&cfg, &args.out)?;
            println!("ablation report: {}", report.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let mutation = match &args.mutate {
                Some(name) => Mutation::parse(name)?,
                None => Mutation::None,
            };
            let results = run_all(mutation);
            let (text, all_passed) = render(&results, mutation);
            print!("{text}");
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out).map_err(|e| Error::Io {
                    path: out.display().to_string(),
                    source: e,
                })?;
                let path = out.join("verify_report.txt");
                std::fs::write(&path, &text).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
            }
            // A clean suite exits 0. Any reported failure exits 3 — including
            // under --mutate, where failing is the expected outcome. A planted
            // defect that slips through every check is itself a failure.
            if mutation != Mutation::None && all_passed {
                eprintln!("error: planted mutation '{}' went undetected", mutation.name());
                return Ok(ExitCode::from(3));
            }
            Ok(if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}

fn load_config(args: &RunArgs) -> avfulldit::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
        cfg.data.seed = seed;
        cfg.infer.seed = seed;
    }
    Ok(cfg)
}
