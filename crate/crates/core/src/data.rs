//! Samples, datasets, the dataset CSV format and synthetic task generators.
//!
//! Dataset CSV: a header row `f0,f1,...,f{d-1},label` followed by one row per
//! sample. For classification the `label` column holds the class index; for
//! regression it holds the real-valued target.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    /// Regression target, or the class index stored as a float.
    pub y: f64,
    /// Partition key. Equals the class for classification data.
    pub group: usize,
}

impl Sample {
    pub fn regression(x: Vec<f64>, y: f64) -> Self {
        Sample { x, y, group: 0 }
    }

    pub fn classified(x: Vec<f64>, class: usize) -> Self {
        Sample {
            x,
            y: class as f64,
            group: class,
        }
    }

    pub fn with_group(mut self, group: usize) -> Self {
        self.group = group;
        self
    }

    pub fn class(&self) -> usize {
        self.y as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Regression,
    Classification { classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    classes: Option<usize>,
}

impl Dataset {
    /// Validates that every sample has the same feature length and, for
    /// classification data, a class index below `classes`.
    pub fn new(samples: Vec<Sample>, classes: Option<usize>) -> Result<Self> {
        let dim = samples.first().map(|s| s.x.len()).ok_or(Error::EmptyDataset)?;
        for s in &samples {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.x.len(),
                });
            }
            if let Some(c) = classes {
                if s.y < 0.0 || s.y.fract() != 0.0 || s.class() >= c {
                    return Err(Error::config(
                        "label",
                        format!("class label {} outside 0..{c}", s.y),
                    ));
                }
            }
        }
        Ok(Dataset {
            samples,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> Option<usize> {
        self.classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Distinct partition groups present, ascending.
    pub fn groups(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.group)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
            self.classes,
        )
    }

    /// Concatenation of several datasets sharing a feature dimension.
    pub fn union<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut classes = None;
        let mut samples = Vec::new();
        for part in parts {
            classes = classes.or(part.classes);
            samples.extend(part.samples.iter().cloned());
        }
        Dataset::new(samples, classes)
    }

    pub fn read_csv<R: Read>(reader: R, kind: TargetKind) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let width = header.len();
        if width < 2 || header.get(width - 1) != Some("label") {
            return Err(Error::config("header", "expected columns f0..f(d-1),label"));
        }
        for (j, name) in header.iter().take(width - 1).enumerate() {
            if name != format!("f{j}") {
                return Err(Error::config("header", format!("column {j} should be `f{j}`, found `{name}`")));
            }
        }
        let classes = match kind {
            TargetKind::Regression => None,
            TargetKind::Classification { classes } => Some(classes),
        };
        let mut samples = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config("row", format!("row {}: {e}", row + 1)))?;
            let (x, y) = values.split_at(width - 1);
            let sample = match kind {
                TargetKind::Regression => Sample::regression(x.to_vec(), y[0]),
                TargetKind::Classification { .. } => {
                    if y[0] < 0.0 || y[0].fract() != 0.0 {
                        return Err(Error::config("label", format!("row {}: `{}` is not a class index", row + 1, y[0])));
                    }
                    Sample::classified(x.to_vec(), y[0] as usize)
                }
            };
            samples.push(sample);
        }
        Dataset::new(samples, classes)
    }

    pub fn load_csv(path: impl AsRef<Path>, kind: TargetKind) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(file, kind)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(s.y.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Linear-Gaussian regression task with noiseless (or optionally noisy)
/// targets `y = xᵀw_true + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionTask {
    pub samples: usize,
    pub dim: usize,
    #[serde(default = "one")]
    pub feature_std: f64,
    #[serde(default = "one")]
    pub weight_std: f64,
    #[serde(default)]
    pub label_noise: f64,
    /// Samples are assigned round-robin to this many partition groups.
    #[serde(default = "one_usize")]
    pub groups: usize,
}

/// Gaussian class blobs: class means drawn from `N(0, separation² I)`,
/// samples from `N(mean_c, noise_std² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationTask {
    pub samples_per_class: usize,
    pub dim: usize,
    pub classes: usize,
    #[serde(default = "one")]
    pub separation: f64,
    #[serde(default = "one")]
    pub noise_std: f64,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std.max(0.0)).expect("finite std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

impl RegressionTask {
    /// Returns the dataset and the generating weight vector.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, ParamVector)> {
        if self.samples == 0 || self.dim == 0 || self.groups == 0 {
            return Err(Error::config("data", "samples, dim and groups must be positive"));
        }
        let mut rng = rng::stream(seed, Purpose::DataGeneration, 0);
        let w_true = ParamVector::new(gaussian_vec(&mut rng, self.dim, self.weight_std));
        let noise = Normal::new(0.0, self.label_noise.max(0.0)).expect("finite noise");
        let samples = (0..self.samples)
            .map(|i| {
                let x = gaussian_vec(&mut rng, self.dim, self.feature_std);
                let mut y = w_true.dot(&x);
                if self.label_noise > 0.0 {
                    y += noise.sample(&mut rng);
                }
                Sample::regression(x, y).with_group(i % self.groups)
            })
            .collect();
        Ok((Dataset::new(samples, None)?, w_true))
    }
}

impl ClassificationTask {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        if self.samples_per_class == 0 || self.dim == 0 || self.classes < 2 {
            return Err(Error::config(
                "data",
                "need samples_per_class > 0, dim > 0 and at least two classes",
            ));
        }
        let mut rng = rng::stream(seed, Purpose::DataGeneration, 1);
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| gaussian_vec(&mut rng, self.dim, self.separation))
            .collect();
        let mut samples = Vec::with_capacity(self.samples_per_class * self.classes);
        for _ in 0..self.samples_per_class {
            for (class, mean) in means.iter().enumerate() {
                let noise = gaussian_vec(&mut rng, self.dim, self.noise_std);
                let x = mean.iter().zip(noise).map(|(m, e)| m + e).collect();
                samples.push(Sample::classified(x, class));
            }
        }
        Dataset::new(samples, Some(self.classes))
    }
}
