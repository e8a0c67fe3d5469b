//! Recovery metrics: bit error rate under greedy Hamming matching, the rate
//! of wrong component counts, and Hellinger fidelity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::emcore::MixtureModel;
use crate::error::{Error, Result};
use crate::shotdata::ShotDataset;
use crate::synth::GroundTruth;

/// Probability mass over bit-strings.
pub type Distribution = BTreeMap<BitString, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub true_index: usize,
    pub estimate_index: usize,
    pub distance: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ber: f64,
    pub k_true: usize,
    pub k_hat: usize,
    pub k_correct: bool,
    pub matching: Vec<MatchedPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hellinger: Option<f64>,
}

impl EvalResult {
    pub fn summary_line(&self) -> String {
        let mut line = format!(
            "BER {:.6}  K_true {}  K_hat {}  {}",
            self.ber,
            self.k_true,
            self.k_hat,
            if self.k_correct { "K correct" } else { "K WRONG" }
        );
        if let Some(h) = self.hellinger {
            line.push_str(&format!("  Hellinger fidelity {h:.6}"));
        }
        line
    }
}

/// Greedy matching: repeatedly pair the globally closest unmatched
/// (true, estimated) strings until either side runs out. Ties go to the
/// lexicographically smaller true string, then estimated string, then the
/// lower indices. `BER = sum of matched distances / (n * |truth|)`.
pub fn ber(truth: &[BitString], estimate: &[BitString], n: usize) -> Result<EvalResult> {
    if truth.is_empty() {
        return Err(Error::InvalidConfig("BER needs at least one true string".into()));
    }
    if let Some(s) = truth.iter().chain(estimate).find(|s| s.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            found: s.len(),
            line: None,
        });
    }

    let mut pairs: Vec<(u32, usize, usize)> = Vec::with_capacity(truth.len() * estimate.len());
    for (ti, t) in truth.iter().enumerate() {
        for (ei, e) in estimate.iter().enumerate() {
            pairs.push((t.distance_unchecked(e), ti, ei));
        }
    }
    pairs.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| truth[a.1].cmp(&truth[b.1]))
            .then_with(|| estimate[a.2].cmp(&estimate[b.2]))
            .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });

    let mut true_used = vec![false; truth.len()];
    let mut est_used = vec![false; estimate.len()];
    let mut matching = Vec::new();
    let limit = truth.len().min(estimate.len());
    for (d, ti, ei) in pairs {
        if matching.len() == limit {
            break;
        }
        if true_used[ti] || est_used[ei] {
            continue;
        }
        true_used[ti] = true;
        est_used[ei] = true;
        matching.push(MatchedPair {
            true_index: ti,
            estimate_index: ei,
            distance: d,
        });
    }
    let total: u64 = matching.iter().map(|m| m.distance as u64).sum();
    Ok(EvalResult {
        ber: total as f64 / (n as f64 * truth.len() as f64),
        k_true: truth.len(),
        k_hat: estimate.len(),
        k_correct: truth.len() == estimate.len(),
        matching,
        hellinger: None,
    })
}

/// Fraction of runs whose estimated K differs from the true K.
pub fn k_error_rate(runs: &[(usize, usize)]) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::InvalidConfig("no runs to score".into()));
    }
    let wrong = runs.iter().filter(|(t, h)| t != h).count();
    Ok(wrong as f64 / runs.len() as f64)
}

fn check_normalized(d: &Distribution) -> Result<()> {
    let total: f64 = d.values().sum();
    if d.values().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Normalization { total });
    }
    Ok(())
}

/// `(sum_i sqrt(p_i q_i))^2` over the union of supports.
pub fn hellinger_fidelity(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_normalized(p)?;
    check_normalized(q)?;
    let (small, large) = if p.len() <= q.len() { (p, q) } else { (q, p) };
    // iterate the smaller map in key order; entries absent from either side
    // contribute zero
    let overlap: f64 = small
        .iter()
        .filter_map(|(k, a)| large.get(k).map(|b| (a * b).sqrt()))
        .sum();
    Ok((overlap * overlap).min(1.0))
}

/// Point-mass mixture: probability `alpha_k` on each center.
pub fn model_to_distribution(model: &MixtureModel) -> Distribution {
    let mut d = Distribution::new();
    for (x, &a) in model.x.iter().zip(&model.alpha) {
        if a > 0.0 {
            *d.entry(x.clone()).or_default() += a;
        }
    }
    d
}

pub fn truth_distribution(truth: &GroundTruth) -> Distribution {
    let mut d = Distribution::new();
    for (x, &a) in truth.solutions.iter().zip(&truth.weights) {
        if a > 0.0 {
            *d.entry(x.clone()).or_default() += a;
        }
    }
    d
}

pub fn empirical_distribution(dataset: &ShotDataset) -> Distribution {
    let s = dataset.len() as f64;
    dataset
        .distinct()
        .iter()
        .zip(dataset.multiplicities())
        .map(|(x, &c)| (x.clone(), c as f64 / s))
        .collect()
}

/// BER plus Hellinger fidelity between the model's point-mass distribution
/// and the true weights.
pub fn evaluate(truth: &GroundTruth, model: &MixtureModel) -> Result<EvalResult> {
    let estimate = model.nonzero();
    let mut result = ber(&truth.solutions, &estimate.x, truth.n())?;
    result.hellinger = Some(hellinger_fidelity(
        &model_to_distribution(&estimate),
        &truth_distribution(truth),
    )?);
    Ok(result)
}
