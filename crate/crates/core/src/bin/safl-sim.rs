use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safl::experiment::{self, RunOptions};
use safl::{Algorithm, Error};

/// Run a federated learning experiment file, or compare metrics files.
#[derive(Parser)]
#[command(name = "safl-sim", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for metrics and summary CSVs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the experiment's base seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Comma-separated subset of the experiment's variants.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Suppress the summary printout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate per-round statistics of two or more metrics files.
    Compare {
        paths: Vec<PathBuf>,
        /// MSE level for rounds-to-threshold statistics.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(Command::Compare { paths, threshold }) = cli.command {
        print!("{}", experiment::compare(&paths, threshold)?);
        return Ok(());
    }
    let config = cli
        .config
        .ok_or_else(|| Error::InvalidConfig { key: "--config".into(), reason: "required".into() })?;
    let variants = cli
        .variants
        .map(|names| {
            names
                .iter()
                .map(|n| {
                    Algorithm::parse(n.trim()).ok_or_else(|| Error::InvalidConfig {
                        key: "variants".into(),
                        reason: format!("unknown variant `{n}`"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    let opts = RunOptions {
        seed_override: cli.seed_override,
        variants,
        threads: None,
    };
    let output = experiment::run_experiment(&config, &cli.out, &opts)?;
    if !cli.quiet {
        for r in &output.rows {
            println!(
                "{}: final mse {:.6e} ± {:.2e}, accuracy {:.4}, uploads {:.1}/{}",
                r.variant, r.final_mse_mean, r.final_mse_stderr, r.final_accuracy_mean, r.uploads_mean, r.upload_budget
            );
        }
        println!("wrote {}", output.summary.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
