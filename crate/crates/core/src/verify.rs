//! Closed-form MSE bounds and empirical rate fitting.
//!
//! Bounds are stated in rounds: `t` counts communication rounds, and the
//! step constants (`α`, `α₀`) are the device learning-rate parameters.

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::params::ParamVector;
use crate::sim::Simulation;
use crate::trainer::{corollary1_alpha0_range, LrSchedule};

/// Constants entering the bounds, measured on a concrete federation.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Smallest strong-convexity constant over the devices.
    pub mu: f64,
    /// Largest smoothness constant over the devices.
    pub lambda: f64,
    /// Per-device gradient noise bound `σ_k²`.
    pub sigma_sq: Vec<f64>,
    /// Aggregation weights `η_k`.
    pub weights: Vec<f64>,
    pub schedule: LrSchedule,
    pub epsilon: f64,
    /// Annealing probability plugged into the fixed-step constant.
    pub p: f64,
    /// Largest number of local steps per round, `E · max m_k`.
    pub q_local: u64,
    /// `max_k ‖w₀^(k) − w*‖²`.
    pub zeta: f64,
    /// `Σ_k η_k ‖w₀^(k) − w*‖²`.
    pub init_spread: f64,
}

impl BoundInputs {
    /// Measures the constants of a freshly built simulation. The noise bound
    /// is taken at the common optimum `w*`, relative to the federated
    /// gradient there, and `p = 1`.
    pub fn measure(sim: &Simulation) -> Result<Self> {
        let obj: &Objective = sim.objective();
        let w_star = sim.optimum();
        let weights = sim.estimate_weights().to_vec();
        let parts: Vec<_> = sim.devices().iter().zip(&weights).map(|(d, &w)| (&d.train, w)).collect();
        let g_star = obj.weighted_gradient(w_star, &parts)?;
        let mut mu = f64::INFINITY;
        let mut lambda = 0.0f64;
        let mut sigma_sq = Vec::with_capacity(weights.len());
        for dev in sim.devices() {
            let c = obj.curvature_at(w_star, &dev.train, Some(&g_star))?;
            mu = mu.min(c.mu);
            lambda = lambda.max(c.lambda);
            sigma_sq.push(c.sigma_sq);
        }
        let dists: Vec<f64> = sim.devices().iter().map(|d| d.initial.dist_sq(w_star)).collect();
        let config = sim.config();
        let largest = sim.devices().iter().map(|d| d.train.len()).max().unwrap_or(0);
        Ok(BoundInputs {
            mu,
            lambda,
            sigma_sq,
            zeta: dists.iter().cloned().fold(0.0, f64::max),
            init_spread: dists.iter().zip(&weights).map(|(d, w)| d * w).sum(),
            weights,
            schedule: config.lr,
            epsilon: config.anneal.epsilon,
            p: 1.0,
            q_local: (config.local_epochs * largest) as u64,
        })
    }

    fn step(&self) -> f64 {
        match self.schedule {
            LrSchedule::Constant { alpha } => alpha,
            LrSchedule::Inverse { alpha0 } => alpha0,
        }
    }

    fn check_common(&self) -> Result<()> {
        if self.sigma_sq.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: self.sigma_sq.len(),
            });
        }
        let nonneg = [self.mu, self.lambda, self.zeta, self.init_spread]
            .iter()
            .chain(&self.sigma_sq)
            .chain(&self.weights)
            .all(|v| *v >= 0.0 && v.is_finite());
        if !nonneg || !(self.mu > 0.0) || self.lambda < self.mu {
            return Err(Error::Precondition("bound inputs need 0 < μ ≤ λ and nonnegative constants".into()));
        }
        if !(0.0..=1.0).contains(&self.p) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Precondition("p and ε must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Fixed-step bound
    /// `(1−αμ)^{2t} ζ + (α/μ) Σ η_k² σ_k² (1 − (1−αμ)^{2q}) / (1 − e^{−c} (1−αμ)^{2q})`
    /// with `c = (1 − p(1−ε²)) ((1 − α(2λ−μ)) / (1 − αμ))²`.
    pub fn theorem1_bound(&self, t: u64) -> Result<f64> {
        self.check_common()?;
        self.schedule.check_theorem1(self.mu, self.lambda)?;
        let alpha = self.step();
        let r = 1.0 - alpha * self.mu;
        let first = r.powf(2.0 * t as f64) * self.zeta;
        let noise: f64 = self.weights.iter().zip(&self.sigma_sq).map(|(e, s)| e * e * s).sum();
        if noise == 0.0 {
            return Ok(first);
        }
        let c = (1.0 - self.p * (1.0 - self.epsilon * self.epsilon))
            * ((1.0 - alpha * (2.0 * self.lambda - self.mu)) / r).powi(2);
        let r2q = r.powf(2.0 * self.q_local as f64);
        Ok(first + alpha / self.mu * noise * (1.0 - r2q) / (1.0 - (-c).exp() * r2q))
    }

    /// `max{2α₀² max_k σ_k² / (2 − (2 − μα₀)²), ζ}`.
    pub fn corollary1_constant(&self) -> Result<f64> {
        self.check_common()?;
        self.schedule.check_corollary1(self.mu)?;
        corollary1_constant(self.step(), self.mu, &self.sigma_sq, self.zeta)
    }

    pub fn corollary1_bound(&self, t: u64) -> Result<f64> {
        Ok(corollary1_bound(self.corollary1_constant()?, t))
    }

    /// `max{α₀² Σ η_k σ_k² / (μα₀ − 1), Σ η_k ‖w₀^(k) − w*‖²}`.
    pub fn theorem3_constant(&self) -> Result<f64> {
        self.check_common()?;
        match self.schedule {
            LrSchedule::Inverse { alpha0 } => {
                theorem3_constant(alpha0, self.mu, &self.sigma_sq, &self.weights, self.init_spread)
            }
            LrSchedule::Constant { .. } => Err(Error::Precondition("decaying-step bound needs an inverse schedule".into())),
        }
    }

    pub fn theorem3_bound(&self, t: u64) -> Result<f64> {
        Ok(theorem3_bound(self.theorem3_constant()?, t))
    }
}

pub fn corollary1_constant(alpha0: f64, mu: f64, sigma_sq: &[f64], zeta: f64) -> Result<f64> {
    let (lo, hi) = corollary1_alpha0_range(mu);
    if !(alpha0 > lo && alpha0 < hi) {
        return Err(Error::Precondition(format!("α₀ = {alpha0} outside ({lo}, {hi})")));
    }
    let worst = sigma_sq.iter().cloned().fold(0.0, f64::max);
    let denom = 2.0 - (2.0 - mu * alpha0).powi(2);
    Ok((2.0 * alpha0 * alpha0 * worst / denom).max(zeta))
}

/// `c / (t + 1)`.
pub fn corollary1_bound(c: f64, t: u64) -> f64 {
    c / (t as f64 + 1.0)
}

pub fn theorem3_constant(alpha0: f64, mu: f64, sigma_sq: &[f64], weights: &[f64], init_spread: f64) -> Result<f64> {
    if !(alpha0 * mu > 1.0) {
        return Err(Error::Precondition(format!("α₀ = {alpha0} must exceed 1/μ = {}", 1.0 / mu)));
    }
    if sigma_sq.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: sigma_sq.len(),
        });
    }
    let noise: f64 = weights.iter().zip(sigma_sq).map(|(e, s)| e * s).sum();
    Ok((alpha0 * alpha0 * noise / (mu * alpha0 - 1.0)).max(init_spread))
}

/// `c / (t + 1)`.
pub fn theorem3_bound(c: f64, t: u64) -> f64 {
    c / (t as f64 + 1.0)
}

/// How the asymptotic floor is removed before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloorMode {
    /// Constant-step runs settle on a noise floor: subtract the series min.
    SeriesMin,
    /// Decaying-step runs converge: no floor.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Sublinear,
    /// Faster than any power law worth reporting (exponent below −3).
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub exponent: f64,
    pub floor: f64,
    pub regime: Regime,
}

/// Least-squares slope of `ln(mse_t − floor)` against `ln(t + 1)` over the
/// tail half of the series, where entry `i` sits at `t = i`. Entries at or
/// below the floor are skipped.
pub fn fit_rate(series: &[f64], mode: FloorMode) -> Result<RateFit> {
    if series.len() < 20 {
        return Err(Error::Precondition(format!("need at least 20 points, got {}", series.len())));
    }
    if series.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Precondition("series entries must be positive and finite".into()));
    }
    let first = series[0];
    if series.iter().all(|v| *v == first) {
        return Err(Error::Degenerate("constant series".into()));
    }
    let floor = match mode {
        FloorMode::SeriesMin => series.iter().cloned().fold(f64::INFINITY, f64::min),
        FloorMode::Zero => 0.0,
    };
    let points: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .skip(series.len() / 2)
        .filter(|(_, v)| **v > floor)
        .map(|(t, v)| (((t + 1) as f64).ln(), (v - floor).ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::Degenerate("too few points above the floor".into()));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("no spread in t".into()));
    }
    let exponent = sxy / sxx;
    Ok(RateFit {
        exponent,
        floor,
        regime: if exponent < -3.0 { Regime::Linear } else { Regime::Sublinear },
    })
}

/// Mean and standard error of each column of equally long series.
pub fn mean_and_stderr(runs: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let Some(len) = runs.iter().map(Vec::len).min() else {
        return Vec::new();
    };
    let k = runs.len() as f64;
    (0..len)
        .map(|t| {
            let mean = runs.iter().map(|r| r[t]).sum::<f64>() / k;
            if runs.len() < 2 {
                return (mean, 0.0);
            }
            let var = runs.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (mean, (var / k).sqrt())
        })
        .collect()
}

/// `Σ η_k ‖w_k − w*‖²`, the quantity the decaying-step device bound controls.
pub fn weighted_device_error(models: &[&ParamVector], weights: &[f64], w_star: &ParamVector) -> f64 {
    models.iter().zip(weights).map(|(m, e)| e * m.dist_sq(w_star)).sum()
}
