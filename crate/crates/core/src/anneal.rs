//! Annealed acceptance of the server model and per-coordinate local/global
//! mixing.
//!
//! Each coordinate takes the blended value `ε·z̄ + (1−ε)·z` with probability
//! `p = exp(−t/L)` and the server value `z̄` otherwise. Early on `p ≈ 1`, so
//! devices lean on their own models; as `p` decays they converge to plain
//! federated averaging.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealClock {
    /// `t` is the communication round index.
    #[default]
    Rounds,
    /// `t` is the device's cumulative local SGD step count.
    LocalSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Independent draw per coordinate.
    #[default]
    PerCoordinate,
    /// One draw per device, shared by every coordinate.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    /// Maximum temperature `L`.
    pub max_temperature: f64,
    /// Mixing weight `ε` of the perturbation state.
    pub epsilon: f64,
    #[serde(default)]
    pub clock: AnnealClock,
    #[serde(default)]
    pub mask: MaskMode,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            max_temperature: 10.0,
            epsilon: 0.5,
            clock: AnnealClock::Rounds,
            mask: MaskMode::PerCoordinate,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_temperature > 0.0) {
            return Err(Error::config("max_temperature", "L must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon", "ε must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn probability(&self, t: u64) -> f64 {
        selection_probability(t, self.max_temperature)
    }

    pub fn sample<R: Rng>(&self, dim: usize, p: f64, rng: &mut R) -> MixMask {
        match self.mask {
            MaskMode::PerCoordinate => sample_mask(dim, p, self.epsilon, rng),
            MaskMode::Scalar => sample_scalar_mask(dim, p, self.epsilon, rng),
        }
    }
}

/// `exp(−t/L)`.
pub fn selection_probability(t: u64, max_temperature: f64) -> f64 {
    (-(t as f64) / max_temperature).exp()
}

/// Mixing mask: every entry is exactly `ε` or exactly `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixMask(Vec<f64>);

impl MixMask {
    pub fn ones(dim: usize) -> Self {
        MixMask(vec![1.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        MixMask(vec![value; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-coordinate draws: `ε` with probability `p`, else `1`.
pub fn sample_mask<R: Rng>(dim: usize, p: f64, epsilon: f64, rng: &mut R) -> MixMask {
    MixMask(
        (0..dim)
            .map(|_| if rng.random::<f64>() < p { epsilon } else { 1.0 })
            .collect(),
    )
}

/// A single draw applied to every coordinate.
pub fn sample_scalar_mask<R: Rng>(dim: usize, p: f64, epsilon: f64, rng: &mut R) -> MixMask {
    let value = if rng.random::<f64>() < p { epsilon } else { 1.0 };
    MixMask::filled(dim, value)
}

/// `u ⊙ z̄ + (1 − u) ⊙ z`.
///
/// Coordinates with `u = 1` copy `z̄` and coordinates with `u = 0` copy `z`
/// bit for bit, so `ε = 1` reproduces federated averaging exactly.
pub fn mix(u: &MixMask, z_bar: &ParamVector, z_local: &ParamVector) -> Result<ParamVector> {
    z_local.check_dim(z_bar.dim())?;
    if u.len() != z_bar.dim() {
        return Err(Error::DimensionMismatch {
            expected: z_bar.dim(),
            got: u.len(),
        });
    }
    Ok(ParamVector::new(
        u.0.iter()
            .zip(z_bar.iter().zip(z_local.iter()))
            .map(|(&u, (&g, &l))| {
                if u == 1.0 {
                    g
                } else if u == 0.0 {
                    l
                } else {
                    u * g + (1.0 - u) * l
                }
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn probability_values() {
        assert_eq!(selection_probability(0, 10.0), 1.0);
        assert_relative_eq!(selection_probability(10, 10.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(selection_probability(80, 80.0), 0.36787944117144233, epsilon = 1e-15);
        for t in 0..500 {
            assert!(selection_probability(t + 1, 7.0) < selection_probability(t, 7.0));
        }
    }

    #[test]
    fn probability_underflows_after_forty_temperatures() {
        assert!(selection_probability(400, 10.0) < 1e-17);
    }

    #[test]
    fn degenerate_masks() {
        let mut rng = rng::stream(1, Purpose::DeviceMask, 0);
        assert_eq!(sample_mask(6, 0.0, 0.3, &mut rng), MixMask::ones(6));
        assert_eq!(sample_mask(6, 1.0, 0.3, &mut rng), MixMask::filled(6, 0.3));
        assert_eq!(sample_scalar_mask(6, 1.0, 0.3, &mut rng), MixMask::filled(6, 0.3));
    }

    #[test]
    fn mask_mean_matches_mixture_expectation() {
        let (p, eps) = (0.4, 0.3);
        let mut rng = rng::stream(2024, Purpose::DeviceMask, 0);
        let mask = sample_mask(100_000, p, eps, &mut rng);
        let n = mask.len() as f64;
        let mean = mask.values().iter().sum::<f64>() / n;
        let expected = eps * p + 1.0 - p;
        // Var[u] = p(1−p)(1−ε)²
        let sd = (p * (1.0 - p)).sqrt() * (1.0 - eps) / n.sqrt();
        assert!((mean - expected).abs() <= 3.0 * sd, "mean {mean} expected {expected}");
    }

    #[test]
    fn mix_edge_cases() {
        let z_bar = ParamVector::new(vec![1.0, -2.0, 0.5]);
        let z = ParamVector::new(vec![0.3, 4.0, -1.0]);
        assert_eq!(mix(&MixMask::ones(3), &z_bar, &z).unwrap(), z_bar);
        assert_eq!(mix(&MixMask::filled(3, 0.0), &z_bar, &z).unwrap(), z);
        let same = mix(&MixMask::filled(3, 0.37), &z, &z).unwrap();
        for j in 0..3 {
            assert_relative_eq!(same[j], z[j], epsilon = 1e-15);
        }
        assert!(mix(&MixMask::ones(2), &z_bar, &z).is_err());
        assert!(mix(&MixMask::ones(3), &z_bar, &ParamVector::zeros(2)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AnnealConfig { max_temperature: 0.0, ..Default::default() }.validate().is_err());
        assert!(AnnealConfig { epsilon: 1.5, ..Default::default() }.validate().is_err());
        assert!(AnnealConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn mix_stays_between_inputs(
            g in prop::collection::vec(-5.0f64..5.0, 8),
            l in prop::collection::vec(-5.0f64..5.0, 8),
            p in 0.0f64..=1.0, eps in 0.0f64..=1.0, seed in 0u64..1000
        ) {
            let mut rng = rng::stream(seed, Purpose::DeviceMask, 0);
            let u = sample_mask(8, p, eps, &mut rng);
            prop_assert!(u.values().iter().all(|&v| v == eps || v == 1.0));
            let w = mix(&u, &ParamVector::new(g.clone()), &ParamVector::new(l.clone())).unwrap();
            for j in 0..8 {
                prop_assert!(w[j] >= g[j].min(l[j]) - 1e-12 && w[j] <= g[j].max(l[j]) + 1e-12);
            }
        }

        #[test]
        fn unit_epsilon_always_returns_server_model(
            g in prop::collection::vec(-5.0f64..5.0, 8),
            l in prop::collection::vec(-5.0f64..5.0, 8),
            p in 0.0f64..=1.0, seed in 0u64..1000
        ) {
            let mut rng = rng::stream(seed, Purpose::DeviceMask, 0);
            let u = sample_mask(8, p, 1.0, &mut rng);
            let z_bar = ParamVector::new(g);
            prop_assert_eq!(mix(&u, &z_bar, &ParamVector::new(l)).unwrap(), z_bar);
        }
    }
}
