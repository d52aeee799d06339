use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dcg_ope_cli::{commands, config};

#[derive(Parser)]
#[command(name = "dcg-ope", version, about = "Off-policy DCG evaluation experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `out`; default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate daily logged datasets and the online value series.
    Simulate,
    /// Exact values of the logging and target policies.
    Value,
    /// Run every configured estimator on a logged dataset.
    Estimate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Correlate offline estimates with the online series across days.
    Correlate,
    /// A/B sensitivity of DCG and nDCG over the clipping grid.
    Sensitivity,
    /// Show DCG/nDCG aggregate order inversions.
    Counterexample,
    /// Randomised single-sample DCG/nDCG order checks.
    LemmaCheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Disagreement between DCG and nDCG over a `model_id,dcg,ndcg` CSV.
    Disagree { path: PathBuf },
}

fn experiment(cli: &Cli) -> Result<config::Experiment> {
    let path = cli.config.as_deref().context("this command needs --config PATH")?;
    let mut exp = config::load(path)?;
    if let Some(seed) = cli.seed {
        exp.config.seed = seed;
    }
    Ok(exp)
}

fn out_dir(cli: &Cli, exp: Option<&config::Experiment>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| exp.and_then(|e| e.config.out.clone()))
        .unwrap_or_else(|| Path::new("out").to_path_buf())
}

fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Counterexample => commands::counterexample(&out_dir(cli, None)),
        Command::LemmaCheck { samples } => {
            let exp = cli.config.as_ref().map(|_| experiment(cli)).transpose()?;
            let seed = cli.seed.or(exp.as_ref().map(|e| e.config.seed)).unwrap_or(0);
            commands::lemma(*samples, seed, &out_dir(cli, exp.as_ref()))
        }
        Command::Disagree { path } => commands::disagree(path, &out_dir(cli, None)),
        cmd => {
            let exp = experiment(cli)?;
            let out = out_dir(cli, Some(&exp));
            match cmd {
                Command::Simulate => commands::simulate(&exp, &out),
                Command::Value => commands::value(&exp, &out),
                Command::Estimate { dataset } => commands::estimate(&exp, dataset, &out),
                Command::Correlate => commands::correlate(&exp, &out),
                Command::Sensitivity => commands::sensitivity(&exp, &out),
                _ => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = writeln!(std::io::stdout(), "{summary}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
