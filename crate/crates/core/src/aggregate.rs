//! Server-side fusion of local updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    /// `η_k ∝ m_k`.
    #[default]
    SizeProportional,
    /// Inverse distance to the previous server model.
    Ida,
    /// Fixed per-device weights indexed by device id, renormalized over the
    /// devices that reported.
    Custom(Vec<f64>),
}

/// One device's contribution to a round.
#[derive(Debug, Clone, Copy)]
pub struct Update<'a> {
    pub device: usize,
    pub model: &'a ParamVector,
    /// Training shard size `m_k`.
    pub samples: usize,
}

fn normalize(raw: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) || raw.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Precondition(format!("weights {raw:?} cannot be normalized")));
    }
    let out: Vec<f64> = raw.into_iter().map(|w| w / total).collect();
    debug_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    Ok(out)
}

/// Normalized nonnegative weights, one per update, in input order.
///
/// For [`WeightScheme::Ida`] `z_ref` must be the previous server model.
/// Updates that coincide with it take the whole mass, split evenly.
pub fn weights(scheme: &WeightScheme, updates: &[Update<'_>], z_ref: Option<&ParamVector>) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::Precondition("no updates to weight".into()));
    }
    match scheme {
        WeightScheme::Uniform => Ok(vec![1.0 / updates.len() as f64; updates.len()]),
        WeightScheme::SizeProportional => normalize(updates.iter().map(|u| u.samples as f64).collect()),
        WeightScheme::Custom(table) => normalize(
            updates
                .iter()
                .map(|u| {
                    table.get(u.device).copied().ok_or_else(|| {
                        Error::config("weights", format!("no custom weight for device {}", u.device))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        WeightScheme::Ida => {
            let z_ref = z_ref.ok_or_else(|| Error::Precondition("inverse-distance weights need a reference model".into()))?;
            let dists = updates
                .iter()
                .map(|u| {
                    u.model.check_dim(z_ref.dim())?;
                    Ok(u.model.dist(z_ref))
                })
                .collect::<Result<Vec<f64>>>()?;
            if dists.iter().any(|&d| d == 0.0) {
                normalize(dists.iter().map(|&d| if d == 0.0 { 1.0 } else { 0.0 }).collect())
            } else {
                normalize(dists.iter().map(|d| 1.0 / d).collect())
            }
        }
    }
}

/// `Σ η_k z_k`, summed in ascending device order.
pub fn aggregate(updates: &[Update<'_>], weights: &[f64]) -> Result<ParamVector> {
    let first = updates.first().ok_or_else(|| Error::Precondition("no updates to aggregate".into()))?;
    if weights.len() != updates.len() {
        return Err(Error::DimensionMismatch {
            expected: updates.len(),
            got: weights.len(),
        });
    }
    let dim = first.model.dim();
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].device);
    let mut out = ParamVector::zeros(dim);
    for i in order {
        updates[i].model.check_dim(dim)?;
        out.axpy(weights[i], updates[i].model);
    }
    Ok(out)
}
