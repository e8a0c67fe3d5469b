//! Depolarization filter.
//!
//! Uniform noise spreads `S` shots over `2^n` strings, so the support of a
//! string (its own count plus the counts of its `n` single-bit neighbours)
//! averages `lambda * (n + 1)` with `lambda = S / 2^n`. Strings whose support
//! falls below `T = max(t_floor, eta * lambda * (n + 1))` are dropped.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::shotdata::ShotDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub eta: f64,
    pub t_floor: f64,
    /// Absolute threshold; bypasses the `eta` formula (still floored).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            eta: 2.0,
            t_floor: 2.0,
            threshold: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.t_floor >= 1.0 && self.t_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!("t_floor must be >= 1, got {}", self.t_floor)));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::InvalidConfig(format!("threshold must be finite, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FilterReport {
    pub kept: ShotDataset,
    pub removed_count: usize,
    pub threshold_used: f64,
    /// Expected count of any single string under uniform noise.
    pub lambda: f64,
    pub support_counts: BTreeMap<BitString, u64>,
}

/// The scalar part of a [`FilterReport`], for printing and logging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub s_in: usize,
    pub s_out: usize,
    pub removed: usize,
    pub threshold: f64,
    pub lambda: f64,
}

impl FilterReport {
    pub fn summary(&self) -> FilterSummary {
        FilterSummary {
            s_in: self.kept.len() + self.removed_count,
            s_out: self.kept.len(),
            removed: self.removed_count,
            threshold: self.threshold_used,
            lambda: self.lambda,
        }
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept.len() as f64 / (self.kept.len() + self.removed_count) as f64
    }
}

/// `f(x)` for every distinct observed `x`: its own count plus the counts of
/// observed strings at Hamming distance one.
pub fn support_counts(dataset: &ShotDataset) -> BTreeMap<BitString, u64> {
    let lookup: HashMap<&BitString, u64> = dataset
        .distinct()
        .iter()
        .zip(dataset.multiplicities().iter().copied())
        .collect();
    let n = dataset.n();
    let support: Vec<u64> = dataset
        .distinct()
        .par_iter()
        .zip(dataset.multiplicities().par_iter())
        .map(|(x, &own)| {
            let mut probe = x.clone();
            let mut total = own;
            for j in 0..n {
                probe.flip(j);
                total += lookup.get(&probe).copied().unwrap_or(0);
                probe.flip(j);
            }
            total
        })
        .collect();
    dataset.distinct().iter().cloned().zip(support).collect()
}

/// Expected uniform count `S / 2^n`.
pub fn uniform_rate(shots: usize, n: usize) -> f64 {
    shots as f64 * (-(n as f64)).exp2()
}

pub fn compute_threshold(shots: usize, n: usize, config: &FilterConfig) -> f64 {
    let scaled = config.eta * uniform_rate(shots, n) * (n as f64 + 1.0);
    config.t_floor.max(scaled)
}

pub fn filter(dataset: &ShotDataset, config: &FilterConfig) -> Result<FilterReport> {
    config.validate()?;
    let threshold = match config.threshold {
        Some(t) => config.t_floor.max(t),
        None => compute_threshold(dataset.len(), dataset.n(), config),
    };
    let support = support_counts(dataset);
    // support is keyed in the same sorted order as dataset.distinct()
    let keep_row: Vec<bool> = support.values().map(|&f| f as f64 >= threshold).collect();
    let kept: Vec<BitString> = dataset
        .shots()
        .iter()
        .zip(dataset.row_of_shot())
        .filter(|(_, &row)| keep_row[row as usize])
        .map(|(s, _)| s.clone())
        .collect();
    let removed_count = dataset.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::AllFiltered { threshold });
    }
    Ok(FilterReport {
        kept: ShotDataset::new(kept)?,
        removed_count,
        threshold_used: threshold,
        lambda: uniform_rate(dataset.len(), dataset.n()),
        support_counts: support,
    })
}
