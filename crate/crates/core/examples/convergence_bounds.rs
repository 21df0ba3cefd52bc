//! Measured bound constants, the decaying-step bound next to the observed
//! MSE, and the fitted rate.
//!
//! ```text
//! cargo run --release --example convergence_bounds
//! ```

use safl::data::RegressionTask;
use safl::verify::{self, BoundInputs, FloorMode};
use safl::{Algorithm, Federation, LrSchedule, Objective, PartitionSpec, SimConfig, Simulation};

fn main() -> safl::Result<()> {
    let (population, _) = RegressionTask {
        samples: 2000,
        dim: 10,
        feature_std: 0.3,
        weight_std: 1.0,
        label_noise: 0.0,
        groups: 1,
    }
    .generate(100)?;
    let fed = Federation::partitioned(Objective::ridge(10, 1.0)?, population, &[PartitionSpec::new(20, 10.0, 0.0, 1, 0)])?;

    // Measure μ on a placeholder run, then use α₀ = 2/μ.
    let config = |alpha0| SimConfig { seed: 100, ..SimConfig::new(20, 500, Algorithm::Safl, LrSchedule::Inverse { alpha0 }) };
    let probe = Simulation::new(config(1.0), &fed)?;
    let mu = BoundInputs::measure(&probe)?.mu;
    let sim = Simulation::new(config(2.0 / mu), &fed)?;
    let inputs = BoundInputs::measure(&sim)?;
    println!(
        "μ = {:.4}, λ = {:.4}, max σ² = {:.4e}, ζ = {:.4}",
        inputs.mu,
        inputs.lambda,
        inputs.sigma_sq.iter().cloned().fold(0.0, f64::max),
        inputs.zeta
    );

    let records = sim.run()?;
    println!("round  mse          bound");
    for r in records.iter().filter(|r| [1, 10, 50, 100, 250, 500].contains(&r.round)) {
        println!("{:>5}  {:.4e}   {:.4e}", r.round, r.mse, inputs.corollary1_bound(r.round as u64)?);
    }
    let series: Vec<f64> = records.iter().map(|r| r.mse).collect();
    let fit = verify::fit_rate(&series, FloorMode::Zero)?;
    println!("fitted exponent {:.3} ({:?})", fit.exponent, fit.regime);
    Ok(())
}
