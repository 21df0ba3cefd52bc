//! FedAvg and SAFL on the same ridge federation and seeds.
//!
//! ```text
//! cargo run --release --example fedavg_vs_safl
//! ```

use safl::data::RegressionTask;
use safl::{Algorithm, AnnealConfig, Federation, LrSchedule, Objective, PartitionSpec, SimConfig, Simulation};

fn main() -> safl::Result<()> {
    let (population, _) = RegressionTask {
        samples: 1200,
        dim: 6,
        feature_std: 0.5,
        weight_std: 1.0,
        label_noise: 0.1,
        groups: 4,
    }
    .generate(7)?;
    let fed = Federation::partitioned(
        Objective::ridge(6, 0.05)?,
        population,
        &[PartitionSpec::new(16, 25.0, 25.0, 2, 7)],
    )?;

    let mut curves = Vec::new();
    for algorithm in [Algorithm::FedAvg, Algorithm::Safl] {
        let config = SimConfig {
            seed: 11,
            anneal: AnnealConfig { max_temperature: 30.0, epsilon: 0.5, ..Default::default() },
            ..SimConfig::new(16, 60, algorithm, LrSchedule::Constant { alpha: 0.1 })
        };
        curves.push(Simulation::new(config, &fed)?.run()?);
    }

    println!("round  fedavg mse   safl mse     safl p");
    for (a, b) in curves[0].iter().zip(&curves[1]).filter(|(a, _)| a.round % 6 == 0 || a.round == 1) {
        println!("{:>5}  {:.4e}   {:.4e}   {:.3}", a.round, a.mse, b.mse, b.p);
    }
    Ok(())
}
