//! Bernoulli bit-flip likelihoods in natural-log space.

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::shotdata::ShotDataset;

use super::model::MixtureModel;
use super::steps::e_step_with_loglik;

/// `log P(y | x, eps) = sum_j [d_j log eps_j + (1 - d_j) log(1 - eps_j)]`
/// with `d = y xor x`.
pub fn log_component_likelihood(y: &BitString, x: &BitString, eps: &[f64]) -> Result<f64> {
    if y.len() != x.len() || y.len() != eps.len() {
        return Err(Error::Dimension {
            expected: eps.len(),
            found: if y.len() != eps.len() { y.len() } else { x.len() },
            line: None,
        });
    }
    let mut total = 0.0;
    for (j, &e) in eps.iter().enumerate() {
        total += if y.get(j) != x.get(j) { e.ln() } else { (1.0 - e).ln() };
    }
    Ok(total)
}

/// Byte-table evaluator for `log P(y | x, eps)`.
///
/// `base = sum_j log(1 - eps_j)`; table `b` maps the `b`-th byte of `y xor x`
/// to the summed `log(eps_j / (1 - eps_j))` over its set bits.
pub(crate) struct LogKernel {
    base: f64,
    tables: Vec<[f64; 256]>,
}

impl LogKernel {
    pub(crate) fn new(eps: &[f64]) -> Self {
        let n = eps.len();
        let base = eps.iter().map(|e| (1.0 - e).ln()).sum();
        let logit: Vec<f64> = eps.iter().map(|e| e.ln() - (1.0 - e).ln()).collect();
        let n_bytes = n.div_ceil(8);
        let mut tables = vec![[0.0f64; 256]; n_bytes];
        for (b, table) in tables.iter_mut().enumerate() {
            for v in 1..256usize {
                // lowest set bit t of v is bit j = 8b + 7 - t of the string
                let t = v.trailing_zeros() as usize;
                let j = 8 * b + 7 - t;
                let w = if j < n { logit[j] } else { 0.0 };
                table[v] = table[v & (v - 1)] + w;
            }
        }
        LogKernel { base, tables }
    }

    #[inline]
    pub(crate) fn eval(&self, y: &BitString, x: &BitString) -> f64 {
        let mut acc = self.base;
        let mut tables = self.tables.iter();
        for (a, b) in y.words().iter().zip(x.words()) {
            let mut d = a ^ b;
            for _ in 0..8 {
                let Some(table) = tables.next() else { break };
                let byte = (d >> 56) as usize;
                if byte != 0 {
                    acc += table[byte];
                }
                d <<= 8;
            }
        }
        acc
    }
}

/// `log sum_i exp(v_i)` with max shift; `-inf` entries are skipped.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Mixture log-likelihood `sum_i log sum_k alpha_k P(y_i | x_k, eps)`.
pub fn log_likelihood(dataset: &ShotDataset, model: &MixtureModel) -> Result<f64> {
    e_step_with_loglik(dataset, model).map(|(_, ll)| ll)
}

/// Penalized objective from a precomputed log-likelihood:
///
/// `L_MML = -(K_nz/2) log(S/12) - (K_nz n + K_nz)/2 + L - (n/2) sum_{alpha_k>0} log(S alpha_k / 12)`
pub fn mml_from_loglik(loglik: f64, shots: usize, n: usize, alpha: &[f64]) -> f64 {
    let s = shots as f64;
    let n = n as f64;
    let k_nz = alpha.iter().filter(|&&a| a > 0.0).count() as f64;
    let weight_cost: f64 = alpha
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| (s * a / 12.0).ln())
        .sum();
    -(k_nz / 2.0) * (s / 12.0).ln() - (k_nz * n + k_nz) / 2.0 + loglik - (n / 2.0) * weight_cost
}

pub fn mml_objective(dataset: &ShotDataset, model: &MixtureModel) -> Result<f64> {
    let ll = log_likelihood(dataset, model)?;
    Ok(mml_from_loglik(ll, dataset.len(), dataset.n(), &model.alpha))
}
