//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safl::aggregate::{self, Update};
use safl::anneal::{self, MaskMode};
use safl::experiment::{self, ExperimentFile, MetricsRow, RunOptions, VariantRun};
use safl::gate;
use safl::verify::{self, FloorMode};
use safl::{
    Algorithm, AnnealConfig, Dataset, Federation, LrSchedule, Objective, PartitionSpec, Sample, SimConfig, Simulation,
};

type Outcome = Result<String, String>;

fn experiments_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("experiments")
}

fn load(name: &str) -> ExperimentFile {
    ExperimentFile::load(experiments_dir().join(name)).expect("experiment file loads")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    }
}

/// Per-seed MSE series of one variant, seeds ascending.
fn mse_by_seed(rows: &[MetricsRow]) -> Vec<Vec<f64>> {
    let mut map: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        map.entry(r.seed).or_default().push(r.mse);
    }
    map.into_values().collect()
}

fn run(file: &ExperimentFile) -> Vec<VariantRun> {
    experiment::execute(file, &experiments_dir(), &RunOptions::default()).expect("experiment runs")
}

fn rows_of(runs: &[VariantRun], alg: Algorithm) -> &[MetricsRow] {
    &runs.iter().find(|r| r.algorithm == alg).expect("variant present").rows
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    let obj = Objective::lasso(2, 1.0).map_err(|e| e.to_string())?;
    let d1 = Dataset::new(vec![Sample::regression(vec![0.25, 0.0], -1.0)], None).unwrap();
    let d2 = Dataset::new(vec![Sample::regression(vec![0.0, 1.5], 1.0)], None).unwrap();
    let both = Dataset::union([&d1, &d2]).unwrap();
    let w1 = obj.optimum_oracle(&d1).unwrap();
    let w2 = obj.optimum_oracle(&d2).unwrap();
    let w_star = obj.optimum_oracle(&both).unwrap();
    let optima_ok = w1.as_slice() == [0.0, 0.0] && w2.as_slice() == [0.0, 4.0 / 9.0] && w_star.as_slice() == [0.0, 4.0 / 9.0];
    let updates = [
        Update { device: 0, model: &w1, samples: 1 },
        Update { device: 1, model: &w2, samples: 1 },
    ];
    let w_bar = aggregate::aggregate(&updates, &[0.5, 0.5]).unwrap();
    let gap = w_star.dist(&w_bar);
    within(start.elapsed(), Duration::from_secs(1))?;
    check(
        optima_ok && (gap - 2.0 / 9.0).abs() <= 1e-12,
        format!("w1={:?} w2={:?} w*={:?} ‖w*−w̄‖={gap:.15}", w1.as_slice(), w2.as_slice(), w_star.as_slice()),
    )
}

fn regression_federation(n: usize, seed: u64) -> Federation {
    let (population, _) = safl::data::RegressionTask {
        samples: 20 * n,
        dim: 4,
        feature_std: 1.0,
        weight_std: 1.0,
        label_noise: 0.1,
        groups: 1,
    }
    .generate(seed)
    .unwrap();
    let obj = Objective::ridge(4, 0.1).unwrap();
    Federation::partitioned(obj, population, &[PartitionSpec::new(n, 12.0, 9.0, 1, seed)]).unwrap()
}

fn criterion2() -> Outcome {
    let start = Instant::now();
    let fed = regression_federation(10, 21);
    let base = |alg| SimConfig {
        seed: 9,
        s: 6,
        ..SimConfig::new(10, 20, alg, LrSchedule::Constant { alpha: 0.05 })
    };
    let mut mismatches = 0;
    for l in [1.0, 10.0, 1e6] {
        let mut fedavg = Simulation::new(base(Algorithm::FedAvg), &fed).unwrap();
        let mut safl = Simulation::new(
            SimConfig {
                anneal: AnnealConfig { max_temperature: l, epsilon: 1.0, ..Default::default() },
                ..base(Algorithm::Safl)
            },
            &fed,
        )
        .unwrap();
        for _ in 0..20 {
            let a = fedavg.run_round().unwrap();
            let b = safl.run_round().unwrap();
            let same_models = fedavg
                .devices()
                .iter()
                .zip(safl.devices())
                .all(|(x, y)| x.model.as_slice().iter().map(|v| v.to_bits()).eq(y.model.as_slice().iter().map(|v| v.to_bits())));
            let same_server = fedavg.server().z_bar.as_slice().iter().map(|v| v.to_bits()).eq(safl.server().z_bar.as_slice().iter().map(|v| v.to_bits()));
            if !(same_models && same_server && a.mse.to_bits() == b.mse.to_bits() && a.selected == b.selected) {
                mismatches += 1;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    check(mismatches == 0, format!("{mismatches} mismatching rounds over L ∈ {{1, 10, 1e6}}"))
}

fn criterion3() -> Outcome {
    let fed = regression_federation(10, 33);
    let cfg = SimConfig {
        seed: 4,
        anneal: AnnealConfig { max_temperature: 1e9, epsilon: 0.0, mask: MaskMode::Scalar, ..Default::default() },
        ..SimConfig::new(10, 30, Algorithm::Safl, LrSchedule::Constant { alpha: 0.05 })
    };
    let mut sim = Simulation::new(cfg, &fed).unwrap();
    let mut checked = 0;
    for _ in 0..30 {
        sim.run_round().unwrap();
        for dev in sim.devices() {
            let local = dev.local.as_ref().ok_or("device never trained")?;
            if dev.model != *local {
                return Err(format!("device {} differs from its local model in round {}", dev.id, sim.server().round));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} device-rounds equal their local z"))
}

fn criterion4() -> Outcome {
    let start = Instant::now();
    let file = load("ridge_decaying_step.toml");
    let runs = run(&file);
    let rows = rows_of(&runs, Algorithm::Safl);
    let series = mse_by_seed(rows);
    let stats = verify::mean_and_stderr(&series);
    let mut bound = vec![f64::INFINITY; stats.len()];
    for r in rows {
        let b = r.bound_corollary1.ok_or("missing corollary bound")?;
        bound[r.round - 1] = bound[r.round - 1].min(b);
    }
    let violations: Vec<usize> = stats
        .iter()
        .zip(&bound)
        .enumerate()
        .filter(|(_, ((m, se), b))| m - 3.0 * se > **b)
        .map(|(i, _)| i + 1)
        .collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let fit = verify::fit_rate(&means, FloorMode::Zero).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(120))?;
    let last = stats.len() - 1;
    check(
        violations.is_empty() && (-1.4..=-0.7).contains(&fit.exponent),
        format!(
            "{} seeds, mean mse at t={} {:.3e} vs bound {:.3e}, {} violating rounds, fitted exponent {:.3}",
            series.len(),
            last + 1,
            stats[last].0,
            bound[last],
            violations.len(),
            fit.exponent
        ),
    )
}

/// Mean MSE over the last fifth of the rounds, averaged over seeds.
fn floor(rows: &[MetricsRow], rounds: usize) -> f64 {
    let tail: Vec<f64> = rows.iter().filter(|r| r.round > rounds - rounds / 5).map(|r| r.mse).collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn with_devices(file: &ExperimentFile, n: usize) -> ExperimentFile {
    let mut f = file.clone();
    f.n = n;
    f.partition[0].devices = n;
    f
}

fn criterion5() -> Outcome {
    let start = Instant::now();
    let file = load("ridge_constant_step.toml");
    let runs = run(&file);
    let rows = rows_of(&runs, Algorithm::Safl);
    let t = file.rounds;
    let at_t: Vec<&MetricsRow> = rows.iter().filter(|r| r.round == t).collect();
    let series: Vec<Vec<f64>> = at_t.iter().map(|r| vec![r.mse]).collect();
    let (mean, se) = verify::mean_and_stderr(&series)[0];
    let bound = at_t
        .iter()
        .map(|r| r.bound_theorem1.ok_or("missing theorem bound"))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let small = with_devices(&file, 5);
    let large = with_devices(&file, 80);
    let floor_small = floor(rows_of(&run(&small), Algorithm::Safl), t);
    let floor_large = floor(rows_of(&run(&large), Algorithm::Safl), t);
    within(start.elapsed(), Duration::from_secs(180))?;
    check(
        mean <= bound && floor_large <= floor_small,
        format!(
            "mean mse at t={t} {mean:.3e} ± {se:.1e} vs bound {bound:.3e}, floor n=5 {floor_small:.3e}, n=80 {floor_large:.3e}"
        ),
    )
}

fn final_mean(rows: &[MetricsRow], rounds: usize) -> f64 {
    let last: Vec<f64> = rows.iter().filter(|r| r.round == rounds).map(|r| r.mse).collect();
    last.iter().sum::<f64>() / last.len() as f64
}

fn criterion6(file: &ExperimentFile, runs: &[VariantRun], elapsed: Duration) -> Outcome {
    let budget = file.n * file.rounds;
    let over_budget = runs
        .iter()
        .flat_map(|r| &r.rows)
        .any(|r| r.uploads_cumulative > file.n * r.round);
    let ext = rows_of(runs, Algorithm::SaflExtended);
    let finals: Vec<f64> = ext.iter().filter(|r| r.round == file.rounds).map(|r| r.uploads_cumulative as f64).collect();
    let fraction = finals.iter().sum::<f64>() / finals.len() as f64 / budget as f64;
    let mse_ext = final_mean(ext, file.rounds);
    let mse_safl = final_mean(rows_of(runs, Algorithm::Safl), file.rounds);
    within(elapsed, Duration::from_secs(180))?;
    check(
        !over_budget && fraction <= 0.85 && mse_ext <= 1.05 * mse_safl,
        format!(
            "{} seeds, uploads {:.1}% of nT, final mse extended {mse_ext:.4e} vs safl {mse_safl:.4e} (ratio {:.3})",
            finals.len(),
            100.0 * fraction,
            mse_ext / mse_safl
        ),
    )
}

fn criterion7(file: &ExperimentFile, runs: &[VariantRun]) -> Outcome {
    let tables = [
        ("fedavg".to_owned(), rows_of(runs, Algorithm::FedAvg).to_vec()),
        ("safl".to_owned(), rows_of(runs, Algorithm::Safl).to_vec()),
    ];
    let cmp = experiment::compare_rows(&tables, None).map_err(|e| e.to_string())?;
    let fedavg = cmp.series[0].median_rounds_to_threshold(file.rounds);
    let safl = cmp.series[1].median_rounds_to_threshold(file.rounds);
    check(
        safl < fedavg,
        format!("threshold {:.4e}, median rounds safl {safl} vs fedavg {fedavg}", cmp.threshold),
    )
}

fn criterion8() -> Outcome {
    const DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (p, eps) = (0.3, 0.25);
    let mask = anneal::sample_mask(DRAWS, p, eps, &mut rng);
    let mean = mask.values().iter().sum::<f64>() / DRAWS as f64;
    let expected = eps * p + 1.0 - p;
    let sigma = ((p * (1.0 - p)).sqrt() * (1.0 - eps)) / (DRAWS as f64).sqrt();
    let q = 0.37;
    let hits = (0..DRAWS).filter(|_| gate::decide_upload(q, &mut rng)).count();
    let rate = hits as f64 / DRAWS as f64;
    let sigma_q = (q * (1.0 - q) / DRAWS as f64).sqrt();
    check(
        (mean - expected).abs() <= 3.0 * sigma && (rate - q).abs() <= 3.0 * sigma_q,
        format!(
            "mask mean {mean:.5} vs {expected:.5} ({:.2}σ), upload rate {rate:.5} vs {q} ({:.2}σ)",
            (mean - expected).abs() / sigma,
            (rate - q).abs() / sigma_q
        ),
    )
}

fn criterion9() -> Outcome {
    let text = std::fs::read_to_string(experiments_dir().join("biased_devices.toml")).map_err(|e| e.to_string())?;
    let text = text.replace("rounds = 100", "rounds = 15").replace("repetitions = 10", "repetitions = 3");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("biased.toml");
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("out{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_safl-sim"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .arg("--quiet")
            .env("SAFL_SIM_THREADS", threads)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("run with {threads} threads exited with {status}"));
        }
        let files = ["fedavg", "safl", "safl_extended"]
            .map(|v| std::fs::read(out.join(format!("metrics_{v}.csv"))).expect("metrics file"));
        outputs.push(files);
    }
    let identical = outputs[0] == outputs[1];
    check(identical, format!("metrics CSVs with 1 and 3 threads identical: {identical}"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, Outcome)> = vec![(1, criterion1()), (2, criterion2()), (3, criterion3())];
    results.push((4, criterion4()));
    results.push((5, criterion5()));
    let file = load("biased_devices.toml");
    let start = Instant::now();
    let runs = run(&file);
    let elapsed = start.elapsed();
    results.push((6, criterion6(&file, &runs, elapsed)));
    results.push((7, criterion7(&file, &runs)));
    results.push((8, criterion8()));
    results.push((9, criterion9()));
    let mut failed = 0;
    for (n, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({detail})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
