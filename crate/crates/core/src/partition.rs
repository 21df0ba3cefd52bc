//! Non-i.i.d. device shards with Gaussian-drawn sizes.
//!
//! Device `k` gets `m_k = max(⌊x_k⌋, 1)` samples with `x_k ~ N(m̄, σ²)`, all
//! drawn from a random subset of the partition groups (class labels).

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// Number of devices in this group.
    pub devices: usize,
    /// Mean shard size m̄.
    pub mean_size: f64,
    /// Shard size variance σ².
    #[serde(default)]
    pub size_var: f64,
    /// Upper bound on the number of labels a device sees.
    pub max_labels: usize,
    /// Lower bound on the number of labels a device sees.
    #[serde(default = "one")]
    pub min_labels: usize,
    /// Restrict label choice to these labels (all labels when absent).
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl PartitionSpec {
    pub fn new(devices: usize, mean_size: f64, size_var: f64, max_labels: usize, seed: u64) -> Self {
        PartitionSpec {
            devices,
            mean_size,
            size_var,
            max_labels,
            min_labels: 1,
            labels: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::config("devices", "need at least one device"));
        }
        if !(self.mean_size > 0.0 && self.mean_size.is_finite()) {
            return Err(Error::config("mean_size", "must be positive"));
        }
        if !(self.size_var >= 0.0 && self.size_var.is_finite()) {
            return Err(Error::config("size_var", "must be nonnegative"));
        }
        if self.max_labels == 0 || self.min_labels == 0 || self.min_labels > self.max_labels {
            return Err(Error::config("max_labels", "need 1 ≤ min_labels ≤ max_labels"));
        }
        Ok(())
    }

    /// Labels this group may draw from, restricted to those present in `data`.
    fn label_pool(&self, data: &Dataset) -> Result<Vec<usize>> {
        let present = data.groups();
        let pool: Vec<usize> = match &self.labels {
            Some(wanted) => {
                let mut wanted = wanted.clone();
                wanted.sort_unstable();
                wanted.dedup();
                wanted.into_iter().filter(|l| present.contains(l)).collect()
            }
            None => present,
        };
        if pool.is_empty() {
            return Err(Error::config("labels", "no sample carries any of the requested labels"));
        }
        if self.max_labels > pool.len() {
            return Err(Error::config(
                "max_labels",
                format!("{} exceeds the {} available labels", self.max_labels, pool.len()),
            ));
        }
        Ok(pool)
    }
}

/// Shard sizes `m_k = max(⌊x_k⌋, 1)`, `x_k ~ N(mean_size, size_var)`.
pub fn sample_sizes(spec: &PartitionSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let normal = Normal::new(spec.mean_size, spec.size_var.sqrt())
        .map_err(|e| Error::config("size_var", e.to_string()))?;
    let mut rng = rng::stream(spec.seed, Purpose::PartitionSizes, 0);
    Ok((0..spec.devices)
        .map(|_| {
            let x: f64 = normal.sample(&mut rng);
            x.floor().max(1.0) as usize
        })
        .collect())
}

/// Builds `spec.devices` shards. Each draws a label subset of uniform size in
/// `[min_labels, max_labels]` and then exactly `m_k` samples carrying those
/// labels, with replacement only when the label pool is smaller than `m_k`.
pub fn partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    let sizes = sample_sizes(spec)?;
    let pool = spec.label_pool(data)?;
    sizes
        .iter()
        .enumerate()
        .map(|(k, &m_k)| {
            let mut rng = rng::stream(spec.seed, Purpose::PartitionSamples, k as u64);
            let subset_size = rng.random_range(spec.min_labels..=spec.max_labels);
            let mut labels = pool.clone();
            labels.shuffle(&mut rng);
            labels.truncate(subset_size);
            let candidates: Vec<usize> = data
                .iter()
                .enumerate()
                .filter(|(_, s)| labels.contains(&s.group))
                .map(|(i, _)| i)
                .collect();
            let chosen: Vec<usize> = if candidates.len() >= m_k {
                index::sample(&mut rng, candidates.len(), m_k)
                    .into_iter()
                    .map(|i| candidates[i])
                    .collect()
            } else {
                (0..m_k)
                    .map(|_| candidates[rng.random_range(0..candidates.len())])
                    .collect()
            };
            data.subset(&chosen)
        })
        .collect()
}

/// Partitions several device groups in order, concatenating their shards.
pub fn partition_groups(data: &Dataset, specs: &[PartitionSpec]) -> Result<Vec<Dataset>> {
    let mut shards = Vec::new();
    for spec in specs {
        shards.extend(partition(data, spec)?);
    }
    Ok(shards)
}
