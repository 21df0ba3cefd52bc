//! Per-device SGD producing the locally trained parameters.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { alpha: f64 },
    /// `α_t = α₀ / (t + 1)` with `t` the device's cumulative step count.
    Inverse { alpha0: f64 },
}

impl LrSchedule {
    pub fn rate(&self, t: u64) -> f64 {
        match *self {
            LrSchedule::Constant { alpha } => alpha,
            LrSchedule::Inverse { alpha0 } => alpha0 / (t as f64 + 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = match *self {
            LrSchedule::Constant { alpha } => alpha,
            LrSchedule::Inverse { alpha0 } => alpha0,
        };
        if a > 0.0 && a.is_finite() {
            Ok(())
        } else {
            Err(Error::config("alpha", "learning rate must be positive and finite"))
        }
    }

    /// Constant step strictly below `1/(2λ − μ)`.
    pub fn check_theorem1(&self, mu: f64, lambda: f64) -> Result<()> {
        match *self {
            LrSchedule::Constant { alpha } if alpha > 0.0 && alpha < 1.0 / (2.0 * lambda - mu) => Ok(()),
            LrSchedule::Constant { alpha } => Err(Error::Precondition(format!(
                "constant step {alpha} must lie in (0, 1/(2λ−μ)) = (0, {})",
                1.0 / (2.0 * lambda - mu)
            ))),
            LrSchedule::Inverse { .. } => Err(Error::Precondition("fixed-step bound needs a constant schedule".into())),
        }
    }

    /// Inverse schedule with `(2 − √2)/μ < α₀ < (2 + √2)/μ`.
    pub fn check_corollary1(&self, mu: f64) -> Result<()> {
        match *self {
            LrSchedule::Inverse { alpha0 } => {
                let (lo, hi) = corollary1_alpha0_range(mu);
                if alpha0 > lo && alpha0 < hi {
                    Ok(())
                } else {
                    Err(Error::Precondition(format!("α₀ = {alpha0} outside ({lo}, {hi})")))
                }
            }
            LrSchedule::Constant { .. } => Err(Error::Precondition("decaying-step bound needs an inverse schedule".into())),
        }
    }
}

/// Open interval of admissible `α₀` for the `1/t` bound.
pub fn corollary1_alpha0_range(mu: f64) -> (f64, f64) {
    let r = std::f64::consts::SQRT_2;
    ((2.0 - r) / mu, (2.0 + r) / mu)
}

/// How a device walks its shard during an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrder {
    /// `m_k` independent uniform draws per epoch.
    #[default]
    IidDraw,
    /// A fresh permutation per epoch.
    Shuffle,
}

/// `w − α·∇F(w; s)`.
pub fn sgd_step(obj: &Objective, w: &ParamVector, sample: &Sample, alpha: f64) -> Result<ParamVector> {
    let g = obj.grad(w, sample)?;
    if !g.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step size {alpha}: {:?}", g.as_slice())));
    }
    let mut next = w.clone();
    next.axpy(-alpha, &g);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRun {
    pub model: ParamVector,
    /// Steps taken in this call, always `epochs · m_k`.
    pub steps: u64,
}

/// Runs `epochs` passes of single-sample SGD over `shard` from `start`.
///
/// `steps_before` is the device's cumulative step count; it drives the
/// inverse learning-rate schedule.
pub fn run_local_epochs<R: Rng>(
    obj: &Objective,
    start: &ParamVector,
    shard: &Dataset,
    epochs: usize,
    schedule: &LrSchedule,
    order: SampleOrder,
    steps_before: u64,
    rng: &mut R,
) -> Result<LocalRun> {
    if epochs == 0 {
        return Err(Error::config("epochs", "need at least one local epoch"));
    }
    if shard.is_empty() {
        return Err(Error::EmptyDataset);
    }
    start.check_dim(obj.param_dim())?;
    let m = shard.len();
    let samples = shard.samples();
    let mut w = start.clone();
    let mut t = steps_before;
    let mut perm: Vec<usize> = (0..m).collect();
    for _ in 0..epochs {
        if order == SampleOrder::Shuffle {
            perm.shuffle(rng);
        }
        for i in 0..m {
            let idx = match order {
                SampleOrder::IidDraw => rng.random_range(0..m),
                SampleOrder::Shuffle => perm[i],
            };
            obj.descend(&mut w, &samples[idx], schedule.rate(t))?;
            if !w.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after local step {t} (rate {})",
                    schedule.rate(t)
                )));
            }
            t += 1;
        }
    }
    Ok(LocalRun {
        model: w,
        steps: (epochs * m) as u64,
    })
}
