//! Runs an experiment file end to end, writes the CSVs and compares
//! FedAvg with SAFL.
//!
//! ```text
//! cargo run --release --example run_experiment -- [config.toml] [out-dir]
//! ```

use std::path::PathBuf;

use safl::experiment::{self, RunOptions};

fn main() -> safl::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("experiments/biased_devices.toml"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("safl-example"));

    let output = experiment::run_experiment(&config, &out, &RunOptions::default())?;
    for row in &output.rows {
        println!(
            "{:<14} final mse {:.4e} ± {:.1e}  uploads {:.1}% of budget",
            row.variant,
            row.final_mse_mean,
            row.final_mse_stderr,
            100.0 * row.uploads_mean / row.upload_budget as f64
        );
    }
    let pair: Vec<PathBuf> = output
        .metrics
        .iter()
        .filter(|p| p.ends_with("metrics_fedavg.csv") || p.ends_with("metrics_safl.csv"))
        .cloned()
        .collect();
    if pair.len() == 2 {
        let cmp = experiment::compare(&pair, None)?;
        println!("\nthreshold {:.4e}", cmp.threshold);
        for s in &cmp.series {
            println!("{}: median rounds to threshold {}", s.label, s.median_rounds_to_threshold(*cmp.rounds.last().unwrap_or(&0)));
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
