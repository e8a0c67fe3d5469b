use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::depfilter::FilterSummary;
use crate::error::{Error, Result};

use super::model::{EmConfig, EmReport, LevelRecord, MixtureModel};

/// On-disk result of a mitigation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub k_hat: usize,
    pub solutions: Vec<BitString>,
    pub alpha: Vec<f64>,
    pub eps: Vec<f64>,
    /// Penalized objective of the selected model (plain log-likelihood when
    /// `mml_enabled` is false).
    pub l_mml: f64,
    pub mml_enabled: bool,
    pub seed: u64,
    pub iterations_total: usize,
    pub levels: Vec<LevelRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSummary>,
}

impl ModelFile {
    pub fn new(report: &EmReport, config: &EmConfig, filter: Option<FilterSummary>) -> Self {
        ModelFile {
            n: report.best.n(),
            k_hat: report.k_hat,
            solutions: report.best.x.clone(),
            alpha: report.best.alpha.clone(),
            eps: report.best.eps.clone(),
            l_mml: report.best_objective,
            mml_enabled: config.mml_enabled,
            seed: config.seed,
            iterations_total: report.iterations_total,
            levels: report.levels.clone(),
            filter,
        }
    }

    pub fn model(&self) -> Result<MixtureModel> {
        let m = MixtureModel::new(self.solutions.clone(), self.alpha.clone(), self.eps.clone())?;
        if m.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: m.n(),
                line: None,
            });
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
