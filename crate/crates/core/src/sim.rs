//! The round loop: selection, local training, gated upload, aggregation,
//! annealed feedback and metric recording.
//!
//! One round `r` proceeds as follows:
//!
//! 1. the server draws `s` of the `n` devices uniformly without replacement;
//! 2. each selected device runs `E` local epochs from its current model,
//!    producing `z_k`;
//! 3. extended mode only: the device uploads with its stored probability
//!    `q` (initially 1); otherwise every selected device uploads;
//! 4. the server fuses the received updates into `z̄_r` (keeping `z̄_{r−1}`
//!    when nothing arrives);
//! 5. `z̄_r` is fed back to the selected devices at the round boundary:
//!    FedAvg replaces the device model, the annealed modes mix it with `z_k`,
//!    and in extended mode the device refreshes `q = exp(−Δ/ν)` from the gap
//!    between `z_k` and a global model on its holdout data;
//! 6. the weighted device average `ŵ_r` is scored against the optimum.
//!
//! Every device owns separate random streams for sample order, masks and
//! upload decisions, and the server owns the selection stream, so a run is a
//! pure function of its configuration no matter how many worker threads
//! execute the per-device work.

use std::sync::OnceLock;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{self, Update, WeightScheme};
use crate::anneal::{self, AnnealClock, AnnealConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gate::{self, AccuracyProxy, GateConfig, GateReference, GateState};
use crate::objectives::Objective;
use crate::params::ParamVector;
use crate::partition::{self, PartitionSpec};
use crate::rng::{self, Purpose, SimRng};
use crate::trainer::{self, LrSchedule, SampleOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(rename = "fedavg")]
    FedAvg,
    Safl,
    SaflExtended,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::Safl => "safl",
            Algorithm::SaflExtended => "safl_extended",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "fedavg" => Some(Algorithm::FedAvg),
            "safl" => Some(Algorithm::Safl),
            "safl_extended" => Some(Algorithm::SaflExtended),
            _ => None,
        }
    }
}

/// Which minimizer the recorded MSE is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumReference {
    /// Minimizer of `Σ_k η_k F_k` over the training shards.
    #[default]
    Federated,
    /// Minimizer over the whole pre-partition dataset.
    Population,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Device count `n`.
    pub n: usize,
    /// Devices selected per round `s`.
    pub s: usize,
    /// Maximum number of rounds `T`.
    pub rounds: usize,
    /// Local epochs `E`.
    pub local_epochs: usize,
    pub algorithm: Algorithm,
    pub anneal: AnnealConfig,
    pub gate: GateConfig,
    pub weights: WeightScheme,
    pub lr: LrSchedule,
    pub order: SampleOrder,
    /// Fraction of each shard held out for the upload gate.
    pub holdout_fraction: f64,
    /// Standard deviation of the Gaussian device initialization.
    pub init_scale: f64,
    pub early_stop_mse: Option<f64>,
    pub reference: OptimumReference,
    pub seed: u64,
    /// Worker threads for per-device work. Never affects results.
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(n: usize, rounds: usize, algorithm: Algorithm, lr: LrSchedule) -> Self {
        SimConfig {
            n,
            s: n,
            rounds,
            local_epochs: 1,
            algorithm,
            anneal: AnnealConfig::default(),
            gate: GateConfig::default(),
            weights: WeightScheme::SizeProportional,
            lr,
            order: SampleOrder::IidDraw,
            holdout_fraction: 0.2,
            init_scale: 0.1,
            early_stop_mse: None,
            reference: OptimumReference::Federated,
            seed: 0,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "need at least one device"));
        }
        if self.s == 0 || self.s > self.n {
            return Err(Error::config("s", format!("need 1 ≤ s ≤ n = {}", self.n)));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs", "need at least one local epoch"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction", "must lie in [0, 1)"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be nonnegative"));
        }
        if let WeightScheme::Custom(table) = &self.weights {
            if table.len() != self.n {
                return Err(Error::config("weights", format!("custom table needs {} entries", self.n)));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "need at least one worker"));
        }
        self.lr.validate()?;
        self.anneal.validate()?;
        self.gate.validate()
    }
}

/// The data side of an experiment: objective, population and device shards.
#[derive(Debug, Clone)]
pub struct Federation {
    pub objective: Objective,
    pub population: Dataset,
    pub shards: Vec<Dataset>,
    population_optimum: OnceLock<ParamVector>,
}

impl Federation {
    pub fn new(objective: Objective, population: Dataset, shards: Vec<Dataset>) -> Self {
        Federation {
            objective,
            population,
            shards,
            population_optimum: OnceLock::new(),
        }
    }

    /// Minimizer over the population, computed once and shared by every
    /// simulation built from this federation.
    pub fn population_optimum(&self) -> Result<&ParamVector> {
        if let Some(w) = self.population_optimum.get() {
            return Ok(w);
        }
        let w = self.objective.optimum_oracle(&self.population)?;
        Ok(self.population_optimum.get_or_init(|| w))
    }

    pub fn partitioned(objective: Objective, population: Dataset, specs: &[PartitionSpec]) -> Result<Self> {
        let shards = partition::partition_groups(&population, specs)?;
        Ok(Federation::new(objective, population, shards))
    }
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: usize,
    /// Current device model `w_k`.
    pub model: ParamVector,
    /// Model the device started from.
    pub initial: ParamVector,
    /// Last locally trained parameters `z_k`.
    pub local: Option<ParamVector>,
    pub train: Dataset,
    pub holdout: Option<Dataset>,
    pub gate: GateState,
    /// Gap measured the last time the gate ran.
    pub last_gap: Option<f64>,
    pub steps: u64,
    pub uploads: usize,
    train_rng: SimRng,
    mask_rng: SimRng,
    gate_rng: SimRng,
}

impl DeviceState {
    fn new(id: usize, shard: &Dataset, dim: usize, config: &SimConfig) -> Result<Self> {
        let mut init_rng = rng::stream(config.seed, Purpose::DeviceInit, id as u64);
        let initial = ParamVector::new(
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut init_rng);
                    config.init_scale * z
                })
                .collect(),
        );
        let held = (config.holdout_fraction * shard.len() as f64).floor() as usize;
        let (train, holdout) = if held == 0 {
            (shard.clone(), None)
        } else {
            let mut split_rng = rng::stream(config.seed, Purpose::Holdout, id as u64);
            let picked = index::sample(&mut split_rng, shard.len(), held).into_vec();
            let mut is_held = vec![false; shard.len()];
            for &i in &picked {
                is_held[i] = true;
            }
            let rest: Vec<usize> = (0..shard.len()).filter(|&i| !is_held[i]).collect();
            let mut picked = picked;
            picked.sort_unstable();
            (shard.subset(&rest)?, Some(shard.subset(&picked)?))
        };
        Ok(DeviceState {
            id,
            model: initial.clone(),
            initial,
            local: None,
            train,
            holdout,
            gate: GateState::default(),
            last_gap: None,
            steps: 0,
            uploads: 0,
            train_rng: rng::stream(config.seed, Purpose::DeviceTraining, id as u64),
            mask_rng: rng::stream(config.seed, Purpose::DeviceMask, id as u64),
            gate_rng: rng::stream(config.seed, Purpose::DeviceGate, id as u64),
        })
    }

    /// Data the upload gate scores models on.
    pub fn eval_set(&self) -> &Dataset {
        self.holdout.as_ref().unwrap_or(&self.train)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub z_bar: ParamVector,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// `‖ŵ_r − w*‖²`.
    pub mse: f64,
    /// Accuracy proxy of `ŵ_r` on the population data.
    pub accuracy: f64,
    pub selected: usize,
    pub uploads: usize,
    /// Annealing probability used this round (0 for FedAvg).
    pub p: f64,
}

/// `Σ_k η_k w_k`, summed in device order.
pub fn global_estimate(devices: &[DeviceState], weights: &[f64]) -> Result<ParamVector> {
    let updates: Vec<Update> = devices
        .iter()
        .map(|d| Update {
            device: d.id,
            model: &d.model,
            samples: d.train.len(),
        })
        .collect();
    aggregate::aggregate(&updates, weights)
}

/// Weights defining `ŵ` and the federated optimum. Inverse-distance fusion
/// only applies to server aggregation, so it estimates with uniform weights.
fn estimate_weights(scheme: &WeightScheme, devices: &[DeviceState]) -> Result<Vec<f64>> {
    let n = devices.len();
    let raw: Vec<f64> = match scheme {
        WeightScheme::Uniform | WeightScheme::Ida => vec![1.0; n],
        WeightScheme::SizeProportional => devices.iter().map(|d| d.train.len() as f64).collect(),
        WeightScheme::Custom(table) => table.clone(),
    };
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || raw.iter().any(|w| *w < 0.0) {
        return Err(Error::config("weights", "weights must be nonnegative with positive sum"));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

struct LocalOutcome {
    model: ParamVector,
    upload: bool,
}

pub struct Simulation {
    config: SimConfig,
    objective: Objective,
    proxy: AccuracyProxy,
    population: Dataset,
    devices: Vec<DeviceState>,
    server: ServerState,
    w_star: ParamVector,
    estimate: Vec<f64>,
    server_rng: SimRng,
    pool: Option<rayon::ThreadPool>,
}

impl Simulation {
    pub fn new(config: SimConfig, federation: &Federation) -> Result<Self> {
        config.validate()?;
        let objective = federation.objective;
        if !objective.is_smooth() {
            return Err(Error::Unsupported("SGD training on a non-smooth objective"));
        }
        if federation.shards.len() != config.n {
            return Err(Error::config(
                "n",
                format!("{} shards for n = {}", federation.shards.len(), config.n),
            ));
        }
        let dim = objective.param_dim();
        let devices = federation
            .shards
            .iter()
            .enumerate()
            .map(|(k, shard)| DeviceState::new(k, shard, dim, &config))
            .collect::<Result<Vec<_>>>()?;
        let estimate = estimate_weights(&config.weights, &devices)?;
        let w_star = match config.reference {
            OptimumReference::Federated => {
                let parts: Vec<(&Dataset, f64)> =
                    devices.iter().zip(&estimate).map(|(d, &w)| (&d.train, w)).collect();
                objective.weighted_optimum(&parts)?
            }
            OptimumReference::Population => federation.population_optimum()?.clone(),
        };
        let z_bar = global_estimate(&devices, &estimate)?;
        let proxy = config.gate.proxy.unwrap_or_else(|| AccuracyProxy::for_objective(&objective));
        let pool = match config.threads {
            Some(t) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::config("threads", e.to_string()))?,
            ),
            None => None,
        };
        Ok(Simulation {
            server_rng: rng::stream(config.seed, Purpose::ServerSelection, 0),
            config,
            objective,
            proxy,
            population: federation.population.clone(),
            devices,
            server: ServerState { z_bar, round: 0 },
            w_star,
            estimate,
            pool,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn optimum(&self) -> &ParamVector {
        &self.w_star
    }

    /// Replaces the learning-rate schedule before the first round.
    pub fn set_learning_rate(&mut self, lr: LrSchedule) -> Result<()> {
        if self.server.round > 0 {
            return Err(Error::Precondition("learning rate is fixed once rounds have run".into()));
        }
        lr.validate()?;
        self.config.lr = lr;
        Ok(())
    }

    /// Weights `η_k` of the device average `ŵ`.
    pub fn estimate_weights(&self) -> &[f64] {
        &self.estimate
    }

    pub fn estimate(&self) -> Result<ParamVector> {
        global_estimate(&self.devices, &self.estimate)
    }

    fn install<T: Send>(&self, op: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(op),
            None => op(),
        }
    }

    fn select(&mut self) -> Vec<bool> {
        let n = self.config.n;
        let mut chosen = vec![false; n];
        if self.config.s == n {
            chosen.iter_mut().for_each(|c| *c = true);
        } else {
            for i in index::sample(&mut self.server_rng, n, self.config.s) {
                chosen[i] = true;
            }
        }
        chosen
    }

    /// Executes one communication round.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let round = self.server.round + 1;
        let selected = self.select();
        let config = self.config.clone();
        let objective = self.objective;
        let proxy = self.proxy;
        let z_prev = self.server.z_bar.clone();

        let mut devices = std::mem::take(&mut self.devices);
        let outcomes: Vec<Option<Result<LocalOutcome>>> = self.install(|| {
            devices
                .par_iter_mut()
                .map(|dev| {
                    selected[dev.id].then(|| local_round(dev, &objective, &config))
                })
                .collect()
        });
        self.devices = devices;

        let mut outcomes_by_device: Vec<Option<LocalOutcome>> = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            match outcome {
                Some(Ok(o)) => outcomes_by_device.push(Some(o)),
                Some(Err(Error::NonFinite(_))) => return Err(Error::Diverged { round }),
                Some(Err(e)) => return Err(e),
                None => outcomes_by_device.push(None),
            }
        }

        let updates: Vec<Update> = outcomes_by_device
            .iter()
            .enumerate()
            .filter_map(|(k, o)| {
                o.as_ref().filter(|o| o.upload).map(|o| Update {
                    device: k,
                    model: &o.model,
                    samples: self.devices[k].train.len(),
                })
            })
            .collect();
        let uploads = updates.len();
        let z_bar = if updates.is_empty() {
            z_prev.clone()
        } else {
            let w = aggregate::weights(&config.weights, &updates, Some(&z_prev))?;
            aggregate::aggregate(&updates, &w)?
        };
        drop(updates);
        if !z_bar.is_finite() {
            return Err(Error::Diverged { round });
        }

        let fb = Feedback {
            z_bar: &z_bar,
            z_prev: (round > 1).then_some(&z_prev),
            p_round: config.anneal.probability(round as u64),
        };
        let mut devices = std::mem::take(&mut self.devices);
        let fed: Result<Vec<f64>> = self.install(|| {
            devices
                .par_iter_mut()
                .zip(outcomes_by_device.into_par_iter())
                .filter_map(|(dev, outcome)| outcome.map(|o| (dev, o)))
                .map(|(dev, outcome)| feedback(dev, outcome, &fb, &objective, &config, proxy))
                .collect()
        });
        self.devices = devices;
        let used_p = fed?;
        let p_round = fb.p_round;

        self.server = ServerState { z_bar, round };
        let estimate = self.estimate()?;
        if !estimate.is_finite() {
            return Err(Error::Diverged { round });
        }
        let mse = estimate.dist_sq(&self.w_star);
        if !mse.is_finite() {
            return Err(Error::Diverged { round });
        }
        let accuracy = gate::accuracy_proxy(&estimate, &self.population, &self.objective, self.proxy)?;
        let p = match config.algorithm {
            Algorithm::FedAvg => 0.0,
            _ if config.anneal.clock == AnnealClock::Rounds => p_round,
            _ => used_p.iter().sum::<f64>() / used_p.len().max(1) as f64,
        };
        Ok(RoundRecord {
            round,
            mse,
            accuracy,
            selected: used_p.len(),
            uploads,
            p,
        })
    }

    /// Runs up to `T` rounds, stopping early once the MSE falls below the
    /// configured threshold.
    pub fn run(mut self) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(self.config.rounds);
        for _ in 0..self.config.rounds {
            let record = self.run_round()?;
            let stop = self.config.early_stop_mse.is_some_and(|t| record.mse < t);
            records.push(record);
            if stop {
                break;
            }
        }
        Ok(records)
    }
}

/// Local training plus, in extended mode, the upload decision.
fn local_round(dev: &mut DeviceState, objective: &Objective, config: &SimConfig) -> Result<LocalOutcome> {
    let run = trainer::run_local_epochs(
        objective,
        &dev.model,
        &dev.train,
        config.local_epochs,
        &config.lr,
        config.order,
        dev.steps,
        &mut dev.train_rng,
    )?;
    dev.steps += run.steps;
    let upload = match config.algorithm {
        Algorithm::SaflExtended => gate::decide_upload(dev.gate.q(), &mut dev.gate_rng),
        _ => true,
    };
    if upload {
        dev.uploads += 1;
    }
    Ok(LocalOutcome {
        model: run.model,
        upload,
    })
}

/// Global models a device sees at feedback time.
struct Feedback<'a> {
    z_bar: &'a ParamVector,
    /// Previous round's aggregate; `None` in the first round.
    z_prev: Option<&'a ParamVector>,
    p_round: f64,
}

/// Applies the server model to a device that took part in the round,
/// refreshes its upload probability and returns the annealing probability
/// it used.
fn feedback(
    dev: &mut DeviceState,
    outcome: LocalOutcome,
    fb: &Feedback,
    objective: &Objective,
    config: &SimConfig,
    proxy: AccuracyProxy,
) -> Result<f64> {
    let z_bar = fb.z_bar;
    let p_round = fb.p_round;
    if config.algorithm == Algorithm::SaflExtended {
        let reference = match config.gate.reference {
            GateReference::Stale => fb.z_prev,
            GateReference::Current => Some(z_bar),
        };
        if let Some(global) = reference {
            let eval = dev.eval_set();
            let h_global = gate::accuracy_proxy(global, eval, objective, proxy)?;
            let h_local = gate::accuracy_proxy(&outcome.model, eval, objective, proxy)?;
            let gap = gate::performance_gap(h_global, h_local, config.gate.eps_div);
            dev.gate.set(gate::upload_probability(gap, config.gate.nu));
            dev.last_gap = Some(gap);
        }
    }
    let p = match config.anneal.clock {
        AnnealClock::Rounds => p_round,
        AnnealClock::LocalSteps => config.anneal.probability(dev.steps),
    };
    dev.model = match config.algorithm {
        Algorithm::FedAvg => z_bar.clone(),
        Algorithm::Safl | Algorithm::SaflExtended => {
            let u = config.anneal.sample(z_bar.dim(), p, &mut dev.mask_rng);
            anneal::mix(&u, z_bar, &outcome.model)?
        }
    };
    dev.local = Some(outcome.model);
    Ok(p)
}
