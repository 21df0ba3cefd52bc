//! Experiment files, metrics CSVs and run comparison.
//!
//! An experiment file is TOML. Top-level keys: `n`, `rounds`, `variants`
//! (required), `s`, `epochs`, `seed`, `repetitions`, `weights`; tables
//! `[objective]`, `[data]`, `[[partition]]`, `[learning_rate]` (required)
//! and `[anneal]`, `[gate]`, `[sim]`. Unknown keys are rejected. See
//! `experiments/` for complete files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::WeightScheme;
use crate::anneal::AnnealConfig;
use crate::data::{ClassificationTask, Dataset, RegressionTask, TargetKind};
use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::objectives::{LossKind, Objective};
use crate::partition::PartitionSpec;
use crate::sim::{Algorithm, Federation, OptimumReference, SimConfig, Simulation};
use crate::trainer::{LrSchedule, SampleOrder};
use crate::verify::{self, BoundInputs};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SAFL_SIM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub n: usize,
    #[serde(default)]
    pub s: Option<usize>,
    pub rounds: usize,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    pub variants: Vec<Algorithm>,
    pub objective: LossKind,
    pub data: DataSpec,
    pub partition: Vec<PartitionSpec>,
    pub learning_rate: LearningRate,
    #[serde(default)]
    pub anneal: AnnealConfig,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub sim: SimOptions,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    SyntheticRegression(RegressionTask),
    SyntheticClassification(ClassificationTask),
    /// Dataset CSV with header `f0,…,f{d−1},label`; relative paths resolve
    /// against the experiment file's directory.
    Csv {
        path: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Inverse,
}

/// Either an absolute step (`alpha`) or one relative to the measured
/// curvature (`relative`): `relative/(2λ − μ)` for constant steps and
/// `relative · 2/μ` for inverse schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRate {
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub order: SampleOrder,
    pub holdout_fraction: f64,
    pub init_scale: f64,
    pub early_stop_mse: Option<f64>,
    pub reference: OptimumReference,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            order: SampleOrder::IidDraw,
            holdout_fraction: 0.2,
            init_scale: 0.1,
            early_stop_mse: None,
            reference: OptimumReference::Federated,
        }
    }
}

/// Pulls the offending key out of a deserializer message.
fn key_from_message(msg: &str) -> String {
    let mut parts = msg.split('`');
    parts.next();
    parts.next().map(str::to_owned).unwrap_or_else(|| "experiment".into())
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_owned();
            Error::config(key_from_message(&msg), msg)
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "need at least one device"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "list at least one variant"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "need at least one repetition"));
        }
        if self.partition.is_empty() {
            return Err(Error::config("partition", "need at least one partition group"));
        }
        let devices: usize = self.partition.iter().map(|p| p.devices).sum();
        if devices != self.n {
            return Err(Error::config("n", format!("partition groups hold {devices} devices, n = {}", self.n)));
        }
        if self.learning_rate.alpha.is_some() == self.learning_rate.relative.is_some() {
            return Err(Error::config("learning_rate", "set exactly one of `alpha` and `relative`"));
        }
        Ok(())
    }

    /// Seeds of the repetitions: `seed, seed + 1, …`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    fn base_config(&self, algorithm: Algorithm, seed: u64) -> SimConfig {
        SimConfig {
            n: self.n,
            s: self.s.unwrap_or(self.n),
            rounds: self.rounds,
            local_epochs: self.epochs,
            algorithm,
            anneal: self.anneal,
            gate: self.gate,
            weights: self.weights.clone(),
            lr: LrSchedule::Constant { alpha: 1.0 },
            order: self.sim.order,
            holdout_fraction: self.sim.holdout_fraction,
            init_scale: self.sim.init_scale,
            early_stop_mse: self.sim.early_stop_mse,
            reference: self.sim.reference,
            seed,
            threads: None,
        }
    }

    /// Builds the data side for one repetition. Every variant of a
    /// repetition sees the same federation.
    pub fn federation(&self, seed: u64, base_dir: &Path) -> Result<Federation> {
        let population = match &self.data {
            DataSpec::SyntheticRegression(task) => task.generate(seed)?.0,
            DataSpec::SyntheticClassification(task) => task.generate(seed)?,
            DataSpec::Csv { path, classes } => {
                let kind = match classes {
                    Some(c) => TargetKind::Classification { classes: *c },
                    None => TargetKind::Regression,
                };
                Dataset::load_csv(base_dir.join(path), kind)?
            }
        };
        let objective = Objective::new(self.objective, population.dim())?;
        let specs: Vec<PartitionSpec> = self
            .partition
            .iter()
            .enumerate()
            .map(|(g, spec)| PartitionSpec {
                seed: seed.wrapping_add(((g as u64) << 32) ^ spec.seed),
                ..spec.clone()
            })
            .collect();
        Federation::partitioned(objective, population, &specs)
    }

    /// Builds a ready-to-run simulation with the learning rate resolved.
    pub fn simulation(&self, algorithm: Algorithm, seed: u64, federation: &Federation) -> Result<Simulation> {
        let mut sim = Simulation::new(self.base_config(algorithm, seed), federation)?;
        let lr = self.resolve_learning_rate(&sim)?;
        sim.set_learning_rate(lr)?;
        Ok(sim)
    }

    fn resolve_learning_rate(&self, sim: &Simulation) -> Result<LrSchedule> {
        let spec = self.learning_rate;
        let step = match (spec.alpha, spec.relative) {
            (Some(alpha), _) => alpha,
            (None, Some(rel)) => {
                let b = BoundInputs::measure(sim)?;
                match spec.schedule {
                    ScheduleKind::Constant => rel / (2.0 * b.lambda - b.mu),
                    ScheduleKind::Inverse => rel * 2.0 / b.mu,
                }
            }
            (None, None) => return Err(Error::config("learning_rate", "missing `alpha` or `relative`")),
        };
        let lr = match spec.schedule {
            ScheduleKind::Constant => LrSchedule::Constant { alpha: step },
            ScheduleKind::Inverse => LrSchedule::Inverse { alpha0: step },
        };
        lr.validate().map_err(|_| Error::config("learning_rate", format!("resolved step {step} is not positive")))?;
        Ok(lr)
    }
}

/// One line of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub seed: u64,
    pub round: usize,
    pub mse: f64,
    pub accuracy_proxy: f64,
    pub uploads_cumulative: usize,
    pub p: f64,
    pub bound_theorem1: Option<f64>,
    pub bound_corollary1: Option<f64>,
}

pub fn write_metrics<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    if rows.is_empty() {
        w.write_record([
            "variant",
            "seed",
            "round",
            "mse",
            "accuracy_proxy",
            "uploads_cumulative",
            "p",
            "bound_theorem1",
            "bound_corollary1",
        ])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    read_metrics(fs::File::open(path)?)
}

/// Runs one simulation and converts its records to metrics rows.
pub fn run_variant(file: &ExperimentFile, algorithm: Algorithm, seed: u64, federation: &Federation) -> Result<Vec<MetricsRow>> {
    let sim = file.simulation(algorithm, seed, federation)?;
    let bounds = match algorithm {
        Algorithm::SaflExtended => None,
        Algorithm::FedAvg => BoundInputs::measure(&sim).ok().map(|b| BoundInputs { epsilon: 1.0, ..b }),
        Algorithm::Safl => BoundInputs::measure(&sim).ok(),
    };
    let records = sim.run()?;
    let mut uploads = 0;
    Ok(records
        .into_iter()
        .map(|r| {
            uploads += r.uploads;
            let t = r.round as u64;
            MetricsRow {
                variant: algorithm.name().to_owned(),
                seed,
                round: r.round,
                mse: r.mse,
                accuracy_proxy: r.accuracy,
                uploads_cumulative: uploads,
                p: r.p,
                bound_theorem1: bounds.as_ref().and_then(|b| b.theorem1_bound(t).ok()),
                bound_corollary1: bounds.as_ref().and_then(|b| b.corollary1_bound(t).ok()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    pub variants: Option<Vec<Algorithm>>,
    /// Worker threads; `None` reads [`THREADS_ENV`], then uses all cores.
    pub threads: Option<usize>,
}

impl RunOptions {
    fn worker_count(&self) -> Result<Option<usize>> {
        if let Some(t) = self.threads {
            return Ok(Some(t));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|t| *t > 0)
                .map(Some)
                .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got {v:?}"))),
            Err(_) => Ok(None),
        }
    }
}

/// All rows of one variant, seeds in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub algorithm: Algorithm,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub seeds: usize,
    pub final_mse_mean: f64,
    pub final_mse_stderr: f64,
    pub final_accuracy_mean: f64,
    pub final_accuracy_stderr: f64,
    pub uploads_mean: f64,
    /// `n · T`.
    pub upload_budget: usize,
}

/// Executes every (variant, seed) pair of an experiment in memory.
pub fn execute(file: &ExperimentFile, base_dir: &Path, opts: &RunOptions) -> Result<Vec<VariantRun>> {
    let mut file = file.clone();
    if let Some(seed) = opts.seed_override {
        file.seed = seed;
    }
    let variants = match &opts.variants {
        Some(v) => {
            if let Some(missing) = v.iter().find(|a| !file.variants.contains(a)) {
                return Err(Error::config("variants", format!("`{}` is not listed in the experiment", missing.name())));
            }
            v.clone()
        }
        None => file.variants.clone(),
    };
    let seeds = file.seeds();
    let work = || -> Result<Vec<VariantRun>> {
        let federations = seeds
            .par_iter()
            .map(|&seed| file.federation(seed, base_dir))
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(Algorithm, usize)> = variants
            .iter()
            .flat_map(|&a| (0..seeds.len()).map(move |i| (a, i)))
            .collect();
        let results = jobs
            .par_iter()
            .map(|&(a, i)| run_variant(&file, a, seeds[i], &federations[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut results = results.into_iter();
        Ok(variants
            .iter()
            .map(|&algorithm| VariantRun {
                algorithm,
                rows: results.by_ref().take(seeds.len()).flatten().collect(),
            })
            .collect())
    };
    match opts.worker_count()? {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::config(THREADS_ENV, e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Final-round statistics per variant.
pub fn summarize(file: &ExperimentFile, runs: &[VariantRun]) -> Vec<SummaryRow> {
    runs.iter()
        .map(|run| {
            let mut last: BTreeMap<u64, &MetricsRow> = BTreeMap::new();
            for row in &run.rows {
                last.insert(row.seed, row);
            }
            let mse: Vec<Vec<f64>> = last.values().map(|r| vec![r.mse]).collect();
            let acc: Vec<Vec<f64>> = last.values().map(|r| vec![r.accuracy_proxy]).collect();
            let (mse_mean, mse_se) = verify::mean_and_stderr(&mse).first().copied().unwrap_or((f64::NAN, 0.0));
            let (acc_mean, acc_se) = verify::mean_and_stderr(&acc).first().copied().unwrap_or((f64::NAN, 0.0));
            SummaryRow {
                variant: run.algorithm.name().to_owned(),
                seeds: last.len(),
                final_mse_mean: mse_mean,
                final_mse_stderr: mse_se,
                final_accuracy_mean: acc_mean,
                final_accuracy_stderr: acc_se,
                uploads_mean: last.values().map(|r| r.uploads_cumulative as f64).sum::<f64>() / last.len().max(1) as f64,
                upload_budget: file.n * file.rounds,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record([
        "variant",
        "seeds",
        "final_mse_mean",
        "final_mse_stderr",
        "final_accuracy_mean",
        "final_accuracy_stderr",
        "uploads_mean",
        "upload_budget",
        "upload_fraction",
    ])?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.seeds.to_string(),
            r.final_mse_mean.to_string(),
            r.final_mse_stderr.to_string(),
            r.final_accuracy_mean.to_string(),
            r.final_accuracy_stderr.to_string(),
            r.uploads_mean.to_string(),
            r.upload_budget.to_string(),
            (r.uploads_mean / r.upload_budget.max(1) as f64).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub metrics: Vec<PathBuf>,
    pub summary: PathBuf,
    pub rows: Vec<SummaryRow>,
}

/// Loads an experiment file, runs it and writes `metrics_<variant>.csv` per
/// variant plus `summary.csv` into `out`.
pub fn run_experiment(config: &Path, out: &Path, opts: &RunOptions) -> Result<ExperimentOutput> {
    let file = ExperimentFile::load(config)?;
    let base_dir = config.parent().unwrap_or(Path::new("."));
    let runs = execute(&file, base_dir, opts)?;
    fs::create_dir_all(out)?;
    let mut metrics = Vec::new();
    for run in &runs {
        let path = out.join(format!("metrics_{}.csv", run.algorithm.name()));
        write_metrics(fs::File::create(&path)?, &run.rows)?;
        metrics.push(path);
    }
    let mut file_for_summary = file.clone();
    if let Some(seed) = opts.seed_override {
        file_for_summary.seed = seed;
    }
    let rows = summarize(&file_for_summary, &runs);
    let summary = out.join("summary.csv");
    write_summary(fs::File::create(&summary)?, &rows)?;
    Ok(ExperimentOutput { metrics, summary, rows })
}

/// Process exit code for an error: 1 configuration or usage, 2 divergence,
/// 3 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::NonFinite(_) => 2,
        Error::Io(_) | Error::Csv(_) => 3,
        _ => 1,
    }
}

/// Per-round statistics of one metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStats {
    pub label: String,
    /// `(round, mse mean, mse stderr, accuracy mean, accuracy stderr)`.
    pub rounds: Vec<(usize, f64, f64, f64, f64)>,
    /// Rounds each seed needed to reach the threshold (`None` if never).
    pub rounds_to_threshold: Vec<Option<usize>>,
}

impl SeriesStats {
    /// Median rounds-to-threshold, counting misses as `rounds + 1`.
    pub fn median_rounds_to_threshold(&self, rounds: usize) -> f64 {
        let mut v: Vec<usize> = self.rounds_to_threshold.iter().map(|r| r.unwrap_or(rounds + 1)).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_unstable();
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2] as f64
        } else {
            (v[k / 2 - 1] + v[k / 2]) as f64 / 2.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threshold: f64,
    pub rounds: Vec<usize>,
    pub series: Vec<SeriesStats>,
}

/// Default threshold as a multiple of the largest final-round mean MSE.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 2.0;

/// First round whose MSE falls to or below `threshold`.
pub fn rounds_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<usize> {
    rows.iter().find(|r| r.mse <= threshold).map(|r| r.round)
}

fn by_seed(rows: &[MetricsRow]) -> BTreeMap<u64, Vec<MetricsRow>> {
    let mut map: BTreeMap<u64, Vec<MetricsRow>> = BTreeMap::new();
    for row in rows {
        map.entry(row.seed).or_default().push(row.clone());
    }
    map
}

/// Compares metrics tables on their shared rounds. Without an explicit
/// threshold, twice the largest final-round mean MSE is used, so every
/// series that settles reaches it.
pub fn compare_rows(tables: &[(String, Vec<MetricsRow>)], threshold: Option<f64>) -> Result<Comparison> {
    if tables.len() < 2 {
        return Err(Error::Precondition("compare needs at least two metrics files".into()));
    }
    let grids: Vec<Vec<usize>> = tables
        .iter()
        .map(|(_, rows)| {
            let mut r: Vec<usize> = rows.iter().map(|r| r.round).collect();
            r.sort_unstable();
            r.dedup();
            r
        })
        .collect();
    let rounds: Vec<usize> = grids[0]
        .iter()
        .copied()
        .filter(|r| grids[1..].iter().all(|g| g.binary_search(r).is_ok()))
        .collect();
    if rounds.is_empty() {
        return Err(Error::Precondition("metrics files share no rounds".into()));
    }
    let per_table: Vec<(String, BTreeMap<u64, Vec<MetricsRow>>)> =
        tables.iter().map(|(label, rows)| (label.clone(), by_seed(rows))).collect();
    let stats_at = |seeds: &BTreeMap<u64, Vec<MetricsRow>>, round: usize| {
        let mse: Vec<Vec<f64>> = seeds
            .values()
            .filter_map(|rows| rows.iter().find(|r| r.round == round).map(|r| vec![r.mse, r.accuracy_proxy]))
            .collect();
        let m = verify::mean_and_stderr(&mse);
        (m[0].0, m[0].1, m[1].0, m[1].1)
    };
    let last = *rounds.last().expect("nonempty");
    let threshold = threshold.unwrap_or_else(|| {
        DEFAULT_THRESHOLD_FACTOR * per_table.iter().map(|(_, s)| stats_at(s, last).0).fold(0.0, f64::max)
    });
    let series = per_table
        .iter()
        .map(|(label, seeds)| SeriesStats {
            label: label.clone(),
            rounds: rounds
                .iter()
                .map(|&r| {
                    let (m, ms, a, as_) = stats_at(seeds, r);
                    (r, m, ms, a, as_)
                })
                .collect(),
            rounds_to_threshold: seeds.values().map(|rows| rounds_to_threshold(rows, threshold)).collect(),
        })
        .collect();
    Ok(Comparison {
        threshold,
        rounds,
        series,
    })
}

/// Loads metrics files and compares them; labels are the variant names
/// found in each file.
pub fn compare(paths: &[PathBuf], threshold: Option<f64>) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(Error::Precondition("compare needs at least two metrics files".into()));
    }
    let tables = paths
        .iter()
        .map(|p| {
            let rows = load_metrics(p)?;
            let label = rows.first().map(|r| r.variant.clone()).unwrap_or_else(|| p.display().to_string());
            Ok((label, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    compare_rows(&tables, threshold)
}

impl fmt::Display for Comparison {
    /// One line per round: mean ± stderr MSE and accuracy for each table and
    /// the MSE difference of each table from the first, then
    /// rounds-to-threshold statistics.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "round")?;
        for s in &self.series {
            write!(f, "\t{0}_mse\t{0}_accuracy", s.label)?;
        }
        for s in &self.series[1..] {
            write!(f, "\tdiff_{}_mse", s.label)?;
        }
        writeln!(f)?;
        for (i, round) in self.rounds.iter().enumerate() {
            write!(f, "{round}")?;
            for s in &self.series {
                let (_, m, ms, a, as_) = s.rounds[i];
                write!(f, "\t{m:.6e}±{ms:.2e}\t{a:.4}±{as_:.4}")?;
            }
            let base = self.series[0].rounds[i].1;
            for s in &self.series[1..] {
                write!(f, "\t{:.6e}", s.rounds[i].1 - base)?;
            }
            writeln!(f)?;
        }
        let last = *self.rounds.last().unwrap_or(&0);
        writeln!(f, "threshold mse ≤ {:.6e}", self.threshold)?;
        for s in &self.series {
            let reached = s.rounds_to_threshold.iter().filter(|r| r.is_some()).count();
            writeln!(
                f,
                "{}: reached by {}/{} seeds, median rounds {}",
                s.label,
                reached,
                s.rounds_to_threshold.len(),
                s.median_rounds_to_threshold(last)
            )?;
        }
        Ok(())
    }
}
