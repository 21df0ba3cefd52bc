//! Gap-gated uploads: a device uploads its local update with probability
//! `exp(−Δ/ν)`, where `Δ` is the relative accuracy gap between a global
//! model and the local model on the device's own holdout data.
//!
//! The probability is refreshed whenever server feedback arrives and used at
//! the device's next upload; it starts at 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::params::ParamVector;

pub const DEFAULT_EPS_DIV: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyProxy {
    /// Fraction of correctly classified holdout samples.
    HoldoutAccuracy,
    /// `1 / (1 + empirical risk)`, for regression objectives.
    InverseRisk,
}

impl AccuracyProxy {
    pub fn for_objective(obj: &Objective) -> Self {
        if obj.is_classifier() {
            AccuracyProxy::HoldoutAccuracy
        } else {
            AccuracyProxy::InverseRisk
        }
    }
}

/// Which global model the local model is scored against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReference {
    /// The global model of the previous round.
    #[default]
    Stale,
    /// The global model that was just received.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Gap regularizer `ν`.
    pub nu: f64,
    #[serde(default = "default_eps_div")]
    pub eps_div: f64,
    /// Chosen from the objective when absent.
    #[serde(default)]
    pub proxy: Option<AccuracyProxy>,
    pub reference: GateReference,
}

fn default_eps_div() -> f64 {
    DEFAULT_EPS_DIV
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            nu: 0.1,
            eps_div: DEFAULT_EPS_DIV,
            proxy: None,
            reference: GateReference::Stale,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::config("nu", "ν must be positive"));
        }
        if !(self.eps_div > 0.0) {
            return Err(Error::config("eps_div", "division guard must be positive"));
        }
        Ok(())
    }
}

/// Current upload probability of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateState {
    q: f64,
}

impl Default for GateState {
    fn default() -> Self {
        GateState { q: 1.0 }
    }
}

impl GateState {
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn set(&mut self, q: f64) {
        debug_assert!(q > 0.0 && q <= 1.0);
        self.q = q;
    }
}

pub fn accuracy_proxy(model: &ParamVector, eval_set: &Dataset, obj: &Objective, kind: AccuracyProxy) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match kind {
        AccuracyProxy::HoldoutAccuracy => {
            if !obj.is_classifier() {
                return Err(Error::Unsupported("holdout accuracy on a regression objective"));
            }
            obj.accuracy(model, eval_set)
        }
        AccuracyProxy::InverseRisk => Ok(1.0 / (1.0 + obj.empirical_risk(model, eval_set)?)),
    }
}

/// `|h_g − h_l| / (h_g + h_l + ε_div)`.
pub fn performance_gap(h_global: f64, h_local: f64, eps_div: f64) -> f64 {
    (h_global - h_local).abs() / (h_global + h_local + eps_div)
}

/// `exp(−Δ/ν)`.
pub fn upload_probability(gap: f64, nu: f64) -> f64 {
    (-gap / nu).exp()
}

/// Bernoulli(q).
pub fn decide_upload<R: Rng>(q: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < q
}
