//! Gap-gated uploads with class-0-only devices in the federation.
//!
//! ```text
//! cargo run --release --example extended_upload_gate
//! ```

use safl::data::ClassificationTask;
use safl::{
    Algorithm, Federation, GateConfig, LrSchedule, Objective, OptimumReference, PartitionSpec, SimConfig, Simulation,
};

fn main() -> safl::Result<()> {
    let population = ClassificationTask {
        samples_per_class: 600,
        dim: 8,
        classes: 3,
        separation: 1.0,
        noise_std: 1.0,
    }
    .generate(5)?;
    let mixed = PartitionSpec { min_labels: 3, ..PartitionSpec::new(21, 60.0, 25.0, 3, 1) };
    let biased = PartitionSpec { labels: Some(vec![0]), ..PartitionSpec::new(9, 60.0, 25.0, 1, 2) };
    let fed = Federation::partitioned(Objective::logistic(8, 3, 0.01)?, population, &[mixed, biased])?;

    for algorithm in [Algorithm::Safl, Algorithm::SaflExtended] {
        let config = SimConfig {
            seed: 3,
            gate: GateConfig { nu: 0.05, ..Default::default() },
            reference: OptimumReference::Population,
            holdout_fraction: 0.3,
            ..SimConfig::new(30, 60, algorithm, LrSchedule::Constant { alpha: 0.05 })
        };
        let mut sim = Simulation::new(config, &fed)?;
        let mut last = None;
        for _ in 0..60 {
            last = Some(sim.run_round()?);
        }
        let rec = last.expect("rounds ran");
        let per_group = |range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            sim.devices()[range].iter().map(|d| d.uploads as f64).sum::<f64>() / n
        };
        println!(
            "{:<14} final mse {:.4e}  accuracy {:.3}  uploads per device: mixed {:.1}, biased {:.1} (of 60)",
            algorithm.name(),
            rec.mse,
            rec.accuracy,
            per_group(0..21),
            per_group(21..30)
        );
    }
    Ok(())
}
