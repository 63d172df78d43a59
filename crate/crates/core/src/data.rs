//! Datasets, synthetic generators, and deterministic splits.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`)
//! and is consumed only through raw 64-bit draws, so the streams below can
//! be reproduced exactly by another implementation of the same generator:
//!
//! * uniform `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! * standard normal: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`, one
//!   value per pair of uniforms
//! * shuffles: Fisher-Yates from the back, index `next_u64 % (i + 1)`

use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::DenseMatrix;
use crate::model::check_labels;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d x N`, one sample per column.
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.cols() {
            return Err(Error::LengthMismatch {
                expected: self.features.cols(),
                found: self.labels.len(),
            });
        }
        if self.len() < 2 {
            return Err(Error::InvalidConfig("dataset needs at least two samples".into()));
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        check_labels(&self.labels, self.num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    /// Columns `indices` as a new dataset with the same class count.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let d = self.dim();
        let features = DenseMatrix::from_fn(d, indices.len(), |i, j| self.features[(i, indices[j])]);
        Dataset {
            features,
            labels: indices.iter().map(|&j| self.labels[j]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
        }
    }
}

/// Seeded generator used across the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = uniform01(rng);
    let u2 = uniform01(rng);
    libm::sqrt(-2.0 * libm::log(1.0 - u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Gaussian blobs: class centers uniform in `[-1, 1]^d`, samples at
/// `center + spread * N(0, I)`. Classes are interleaved in sample order.
pub fn synth_blobs(n_per_class: usize, d: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || d == 0 || classes == 0 || !(spread >= 0.0) {
        return Err(Error::InvalidConfig("blob counts must be positive and spread non-negative".into()));
    }
    let mut rng = rng(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| 2.0 * uniform01(&mut rng) - 1.0).collect())
        .collect();
    let n = n_per_class * classes;
    let mut features = DenseMatrix::zeros(d, n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let c = j % classes;
        labels.push(c);
        for i in 0..d {
            features[(i, j)] = centers[c][i] + spread * standard_normal(&mut rng);
        }
    }
    Dataset::new(features, labels, classes, "synth")
}

/// Random disjoint train/test partition. The train side gets
/// `round(fraction * N)` samples.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig("train fraction must lie in (0, 1)".into()));
    }
    let n = ds.len();
    let n_train = libm::round(train_fraction * n as f64) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::EmptySplit);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut rng(seed));
    let (train_idx, test_idx) = idx.split_at(n_train);
    Ok((
        ds.select(train_idx, alloc::format!("{}-train", ds.name)),
        ds.select(test_idx, alloc::format!("{}-test", ds.name)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    /// Every sample column scaled to unit l2 norm (zero columns stay zero).
    UnitRows,
    /// Every feature shifted to mean 0 and scaled to unit population
    /// variance; constant features map to 0.
    Standardize,
}

pub fn normalize_features(ds: &Dataset, mode: Normalization) -> Dataset {
    let mut out = ds.clone();
    let (d, n) = ds.features.shape();
    match mode {
        Normalization::None => {}
        Normalization::UnitRows => {
            for j in 0..n {
                let norm = libm::sqrt((0..d).map(|i| { let v = ds.features[(i, j)]; v * v }).sum::<f64>());
                if norm > 0.0 {
                    for i in 0..d {
                        out.features[(i, j)] = ds.features[(i, j)] / norm;
                    }
                }
            }
        }
        Normalization::Standardize => {
            for i in 0..d {
                let row = ds.features.row(i);
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let sd = libm::sqrt(var);
                for j in 0..n {
                    out.features[(i, j)] = if sd > 0.0 { (row[j] - mean) / sd } else { 0.0 };
                }
            }
        }
    }
    out
}
