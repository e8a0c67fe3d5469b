//! E-step and M-step updates.
//!
//! Work is split into fixed-size blocks of stored rows and partial sums are
//! combined in block order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::shotdata::ShotDataset;

use super::likelihood::LogKernel;
use super::model::{EmConfig, MixtureModel, Responsibilities};

const BLOCK_ROWS: usize = 256;

/// Posterior memberships `W[i, k] = alpha_k P(y_i | x_k) / sum_l alpha_l P(y_i | x_l)`.
pub fn e_step(dataset: &ShotDataset, model: &MixtureModel) -> Result<Responsibilities> {
    e_step_with_loglik(dataset, model).map(|(w, _)| w)
}

/// E-step plus the mixture log-likelihood of `model`, from the same pass.
pub fn e_step_with_loglik(dataset: &ShotDataset, model: &MixtureModel) -> Result<(Responsibilities, f64)> {
    model.check_against(dataset)?;
    let k = model.k();
    let kernel = LogKernel::new(&model.eps);
    let log_alpha: Vec<f64> = model.alpha.iter().map(|a| a.ln()).collect();
    let distinct = dataset.distinct();
    let mult = dataset.multiplicities();

    let mut rows = vec![0.0f64; distinct.len() * k];
    let partials: Vec<f64> = rows
        .par_chunks_mut(BLOCK_ROWS * k)
        .enumerate()
        .map(|(block, out)| {
            let start = block * BLOCK_ROWS;
            let mut scratch = vec![f64::NEG_INFINITY; k];
            let mut ll = 0.0;
            for (r, w) in out.chunks_exact_mut(k).enumerate() {
                let y = &distinct[start + r];
                let mut max = f64::NEG_INFINITY;
                for c in 0..k {
                    scratch[c] = if model.alpha[c] > 0.0 {
                        log_alpha[c] + kernel.eval(y, &model.x[c])
                    } else {
                        f64::NEG_INFINITY
                    };
                    max = max.max(scratch[c]);
                }
                let mut sum = 0.0;
                for c in 0..k {
                    let v = if scratch[c] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (scratch[c] - max).exp()
                    };
                    w[c] = v;
                    sum += v;
                }
                for v in w.iter_mut() {
                    *v /= sum;
                }
                ll += mult[start + r] as f64 * (max + sum.ln());
            }
            ll
        })
        .collect();
    let loglik = partials.iter().sum();
    Ok((Responsibilities::for_distinct(dataset, k, rows), loglik))
}

/// Weight update with component annihilation:
/// `alpha_k = max(0, m_k - n/2) / sum_l max(0, m_l - n/2)`, `m_k = sum_i W[i, k]`.
pub fn m_step_alpha(w: &Responsibilities, n: usize) -> Result<Vec<f64>> {
    let half = n as f64 / 2.0;
    let numer: Vec<f64> = w.column_mass().into_iter().map(|m| (m - half).max(0.0)).collect();
    let total: f64 = numer.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(format!(
            "every component has responsibility mass <= n/2 = {half}"
        )));
    }
    Ok(numer.into_iter().map(|v| v / total).collect())
}

/// Unpenalized weight update `alpha_k = m_k / S`.
pub fn m_step_alpha_plain(w: &Responsibilities) -> Vec<f64> {
    let s = w.len() as f64;
    w.column_mass().into_iter().map(|m| m / s).collect()
}

/// Per-component sufficient statistics: total mass and, for every bit, the
/// mass of rows with that bit set.
pub(crate) struct ColumnStats {
    pub mass: Vec<f64>,
    /// `ones[k][j] = sum_i W[i, k] y_ij`
    pub ones: Vec<Vec<f64>>,
}

pub(crate) fn column_stats(dataset: &ShotDataset, w: &Responsibilities) -> Result<ColumnStats> {
    let n = dataset.n();
    let rows: Vec<(&BitString, f64, &[f64])> = w.stored_rows(dataset)?.collect();
    let per_component: Vec<(f64, Vec<f64>)> = (0..w.k())
        .into_par_iter()
        .map(|c| {
            let mut mass = 0.0;
            let mut ones = vec![0.0; n];
            for (y, m, row) in &rows {
                let wt = m * row[c];
                if wt == 0.0 {
                    continue;
                }
                mass += wt;
                for (wi, &word) in y.words().iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let lz = bits.leading_zeros() as usize;
                        ones[wi * 64 + lz] += wt;
                        bits &= !(1u64 << (63 - lz));
                    }
                }
            }
            (mass, ones)
        })
        .collect();
    let (mass, ones) = per_component.into_iter().unzip();
    Ok(ColumnStats { mass, ones })
}

fn centers_from_stats(stats: &ColumnStats) -> Vec<BitString> {
    stats
        .mass
        .iter()
        .zip(&stats.ones)
        .map(|(&mass, ones)| BitString::from_bits(ones.iter().map(|&o| heaviside(2.0 * o - mass))))
        .collect()
}

fn mismatch_from_stats(stats: &ColumnStats, x: &[BitString], shots: usize) -> Vec<f64> {
    let n = stats.ones.first().map(Vec::len).unwrap_or(0);
    let s = shots as f64;
    (0..n)
        .map(|j| {
            let mut total = 0.0;
            for (c, center) in x.iter().enumerate() {
                let ones = stats.ones[c][j];
                total += if center.get(j) { stats.mass[c] - ones } else { ones };
            }
            total / s
        })
        .collect()
}

#[inline]
fn heaviside(u: f64) -> bool {
    u >= 0.0
}

/// Center update `x_kj = H(sum_i W[i, k] (2 y_ij - 1))` with `H(0) = 1`.
pub fn m_step_x(dataset: &ShotDataset, w: &Responsibilities) -> Result<Vec<BitString>> {
    Ok(centers_from_stats(&column_stats(dataset, w)?))
}

/// Unclamped `eps_j = (1/S) sum_i sum_k W[i, k] (y_ij xor x_kj)`.
pub fn mismatch_rates(dataset: &ShotDataset, w: &Responsibilities, x: &[BitString]) -> Result<Vec<f64>> {
    if x.len() != w.k() {
        return Err(Error::Dimension {
            expected: w.k(),
            found: x.len(),
            line: None,
        });
    }
    let stats = column_stats(dataset, w)?;
    Ok(mismatch_from_stats(&stats, x, dataset.len()))
}

/// Flip-probability update, clamped to `[eps_clamp_lo, 0.5 - eps_clamp_gap]`.
pub fn m_step_eps(
    dataset: &ShotDataset,
    w: &Responsibilities,
    x: &[BitString],
    config: &EmConfig,
) -> Result<Vec<f64>> {
    Ok(mismatch_rates(dataset, w, x)?
        .into_iter()
        .map(|e| config.clamp_eps(e))
        .collect())
}

/// One full M-step. Centers of components whose new weight is zero are left
/// untouched.
pub(crate) fn m_step(
    dataset: &ShotDataset,
    w: &Responsibilities,
    current: &MixtureModel,
    config: &EmConfig,
) -> Result<MixtureModel> {
    let alpha = if config.mml_enabled {
        m_step_alpha(w, dataset.n())?
    } else {
        m_step_alpha_plain(w)
    };
    let stats = column_stats(dataset, w)?;
    let x: Vec<BitString> = centers_from_stats(&stats)
        .into_iter()
        .zip(&current.x)
        .zip(&alpha)
        .map(|((new, old), &a)| if a > 0.0 { new } else { old.clone() })
        .collect();
    let eps = mismatch_from_stats(&stats, &x, dataset.len())
        .into_iter()
        .map(|e| config.clamp_eps(e))
        .collect();
    Ok(MixtureModel { x, alpha, eps })
}
