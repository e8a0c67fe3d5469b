use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::shotdata::ShotDataset;

/// Mixture parameters: component centers, mixing weights and per-qubit flip
/// probabilities shared by all components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub x: Vec<BitString>,
    pub alpha: Vec<f64>,
    pub eps: Vec<f64>,
}

impl MixtureModel {
    pub fn new(x: Vec<BitString>, alpha: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        let m = MixtureModel { x, alpha, eps };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.eps.len()
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    /// Number of components with positive weight.
    pub fn k_nz(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::InvalidModel("model has no components".into()));
        }
        if self.x.len() != self.alpha.len() {
            return Err(Error::InvalidModel(format!(
                "{} centers but {} weights",
                self.x.len(),
                self.alpha.len()
            )));
        }
        let n = self.eps.len();
        if let Some(c) = self.x.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                found: c.len(),
                line: None,
            });
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
            return Err(Error::InvalidModel(format!("flip probability {e} outside (0, 0.5)")));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidModel("negative or NaN mixing weight".into()));
        }
        let total: f64 = self.alpha.iter().sum();
        if total == 0.0 {
            return Err(Error::InvalidModel("all mixing weights are zero".into()));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("mixing weights sum to {total}")));
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, dataset: &ShotDataset) -> Result<()> {
        self.validate()?;
        if self.n() != dataset.n() {
            return Err(Error::Dimension {
                expected: dataset.n(),
                found: self.n(),
                line: None,
            });
        }
        Ok(())
    }

    /// Copy keeping only the components with positive weight.
    pub fn nonzero(&self) -> MixtureModel {
        let (x, alpha) = self
            .x
            .iter()
            .zip(&self.alpha)
            .filter(|(_, &a)| a > 0.0)
            .map(|(x, &a)| (x.clone(), a))
            .unzip();
        MixtureModel {
            x,
            alpha,
            eps: self.eps.clone(),
        }
    }
}

/// Posterior component memberships, `S x K`.
///
/// Identical shots have identical rows, so rows are stored once per distinct
/// string (as produced by [`e_step`](super::e_step)) or once per shot (as
/// built by [`from_dense`](Self::from_dense)); `row_of_shot` maps shots to
/// stored rows and `multiplicity` counts the shots sharing each row.
#[derive(Clone, Debug)]
pub struct Responsibilities {
    k: usize,
    rows: Vec<f64>,
    multiplicity: Arc<[u64]>,
    row_of_shot: Arc<[u32]>,
    layout: RowLayout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RowLayout {
    Distinct,
    PerShot,
}

impl Responsibilities {
    pub(crate) fn for_distinct(dataset: &ShotDataset, k: usize, rows: Vec<f64>) -> Self {
        let (row_of_shot, multiplicity) = dataset.shared_rows();
        debug_assert_eq!(rows.len(), multiplicity.len() * k);
        Responsibilities {
            k,
            rows,
            multiplicity,
            row_of_shot,
            layout: RowLayout::Distinct,
        }
    }

    /// One explicit row per shot. Rows must be non-negative and sum to one
    /// within 1e-9.
    pub fn from_dense(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || k == 0 {
            return Err(Error::InvalidModel("responsibility matrix is empty".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * k);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    found: r.len(),
                    line: Some(i + 1),
                });
            }
            let sum: f64 = r.iter().sum();
            if r.iter().any(|w| !(0.0..=1.0).contains(w)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!("row {i} is not a probability vector")));
            }
            flat.extend_from_slice(r);
        }
        let s = rows.len();
        Ok(Responsibilities {
            k,
            rows: flat,
            multiplicity: vec![1u64; s].into(),
            row_of_shot: (0..s as u32).collect::<Vec<_>>().into(),
            layout: RowLayout::PerShot,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of shots `S`.
    pub fn len(&self) -> usize {
        self.row_of_shot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_of_shot.is_empty()
    }

    /// `W[i, k]`.
    pub fn get(&self, shot: usize, k: usize) -> f64 {
        self.row(shot)[k]
    }

    pub fn row(&self, shot: usize) -> &[f64] {
        let r = self.row_of_shot[shot] as usize;
        &self.rows[r * self.k..(r + 1) * self.k]
    }

    /// `sum_i W[i, k]` for every `k`.
    pub fn column_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.k];
        for (row, &m) in self.rows.chunks_exact(self.k).zip(self.multiplicity.iter()) {
            for (acc, &w) in mass.iter_mut().zip(row) {
                *acc += m as f64 * w;
            }
        }
        mass
    }

    /// Stored rows paired with the string they belong to and their
    /// multiplicity.
    pub(crate) fn stored_rows<'a>(
        &'a self,
        dataset: &'a ShotDataset,
    ) -> Result<impl Iterator<Item = (&'a BitString, f64, &'a [f64])> + 'a> {
        let strings: &[BitString] = match self.layout {
            RowLayout::Distinct => dataset.distinct(),
            RowLayout::PerShot => dataset.shots(),
        };
        if self.len() != dataset.len() || strings.len() * self.k != self.rows.len() {
            return Err(Error::Dimension {
                expected: dataset.len(),
                found: self.len(),
                line: None,
            });
        }
        Ok(strings
            .iter()
            .zip(self.multiplicity.iter())
            .zip(self.rows.chunks_exact(self.k))
            .map(|((s, &m), row)| (s, m as f64, row)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Relative change of the objective below which a level has converged.
    pub delta: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub eps_init: f64,
    pub eps_clamp_lo: f64,
    pub eps_clamp_gap: f64,
    /// When false, weights follow the plain ML update and the objective is
    /// the unpenalized log-likelihood.
    pub mml_enabled: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            k_min: 1,
            k_max: 16,
            delta: 1e-5,
            max_iters: 500,
            seed: 0,
            eps_init: 0.25,
            eps_clamp_lo: 1e-6,
            eps_clamp_gap: 1e-6,
            mml_enabled: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k_min < 1 || self.k_min > self.k_max {
            return bad(format!("need 1 <= k_min <= k_max, got {}..{}", self.k_min, self.k_max));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.eps_init > 0.0 && self.eps_init < 0.5) {
            return bad(format!("eps_init must lie in (0, 0.5), got {}", self.eps_init));
        }
        if !(self.eps_clamp_lo > 0.0 && self.eps_clamp_gap > 0.0 && self.eps_clamp_lo < self.eps_hi()) {
            return bad(format!(
                "invalid flip clamp [{}, 0.5 - {}]",
                self.eps_clamp_lo, self.eps_clamp_gap
            ));
        }
        Ok(())
    }

    pub fn eps_hi(&self) -> f64 {
        0.5 - self.eps_clamp_gap
    }

    pub fn clamp_eps(&self, e: f64) -> f64 {
        e.clamp(self.eps_clamp_lo, self.eps_hi())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub k_nz: usize,
    pub iteration: usize,
    pub objective: f64,
}

/// Outcome of one pass of the inner loop (one K level).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    /// Non-zero components entering the level.
    pub k_start: usize,
    /// Non-zero components after convergence.
    pub k_end: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Final objective; absent when the level degenerated.
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    /// Best model, restricted to components with positive weight.
    pub best: MixtureModel,
    pub k_hat: usize,
    pub best_objective: f64,
    pub objective_trace: Vec<TracePoint>,
    pub levels: Vec<LevelRecord>,
    pub iterations_total: usize,
}
