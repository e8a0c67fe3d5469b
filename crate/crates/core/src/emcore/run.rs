use log::debug;

use crate::error::{Error, Result};
use crate::shotdata::ShotDataset;

use super::init::kmeanspp_init;
use super::likelihood::mml_from_loglik;
use super::model::{EmConfig, EmReport, LevelRecord, MixtureModel, TracePoint};
use super::steps::{e_step_with_loglik, m_step};

#[derive(Clone, Debug)]
pub struct FixedKOutcome {
    pub model: MixtureModel,
    /// Objective of the starting model followed by one value per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FixedKOutcome {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial objective")
    }
}

fn objective(dataset: &ShotDataset, model: &MixtureModel, loglik: f64, config: &EmConfig) -> f64 {
    if config.mml_enabled {
        mml_from_loglik(loglik, dataset.len(), dataset.n(), &model.alpha)
    } else {
        loglik
    }
}

/// Inner EM loop from `init` until the objective changes by less than
/// `delta * |previous|` or `max_iters` is reached.
pub fn run_em_fixed_k(dataset: &ShotDataset, init: &MixtureModel, config: &EmConfig) -> Result<FixedKOutcome> {
    config.validate()?;
    let (mut w, ll) = e_step_with_loglik(dataset, init)?;
    let mut model = init.clone();
    let mut prev = objective(dataset, &model, ll, config);
    let mut trace = vec![prev];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        model = m_step(dataset, &w, &model, config)?;
        // the E-step for the next iteration also yields L of the new model
        let (next_w, ll) = e_step_with_loglik(dataset, &model)?;
        w = next_w;
        let cur = objective(dataset, &model, ll, config);
        trace.push(cur);
        if (cur - prev).abs() < config.delta * prev.abs() {
            converged = true;
            break;
        }
        prev = cur;
    }

    Ok(FixedKOutcome {
        model,
        trace,
        iterations,
        converged,
    })
}

/// Starting model: k-means++ centers, uniform weights, constant flip rate.
pub fn initial_model(dataset: &ShotDataset, config: &EmConfig) -> Result<MixtureModel> {
    let centers = kmeanspp_init(dataset, config.k_max, config.seed)?;
    let k = centers.len();
    MixtureModel::new(
        centers,
        vec![1.0 / k as f64; k],
        vec![config.clamp_eps(config.eps_init); dataset.n()],
    )
}

fn annihilate_smallest(model: &mut MixtureModel) {
    let smallest = model
        .alpha
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > 0.0)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k);
    if let Some(k) = smallest {
        model.alpha[k] = 0.0;
        let total: f64 = model.alpha.iter().sum();
        if total > 0.0 {
            for a in model.alpha.iter_mut() {
                *a /= total;
            }
        }
    }
}

/// Full model-selection loop: run EM from `k_max` components, keep the model
/// with the highest objective, annihilate the lightest surviving component
/// and repeat down to `k_min`.
///
/// A level whose weight update annihilates every component is recorded as
/// degenerate; the descent continues from that level's starting model.
pub fn run_em(dataset: &ShotDataset, config: &EmConfig) -> Result<EmReport> {
    config.validate()?;
    run_em_from(dataset, initial_model(dataset, config)?, config)
}

/// [`run_em`] from an explicit starting model.
pub fn run_em_from(dataset: &ShotDataset, init: MixtureModel, config: &EmConfig) -> Result<EmReport> {
    config.validate()?;
    init.check_against(dataset)?;
    let mut model = init;
    let mut best: Option<(f64, MixtureModel)> = None;
    let mut trace = Vec::new();
    let mut levels = Vec::new();
    let mut t = 0;
    let mut last_error = None;

    while model.k_nz() >= config.k_min {
        let k_start = model.k_nz();
        match run_em_fixed_k(dataset, &model, config) {
            Ok(outcome) => {
                let k_end = outcome.model.k_nz();
                for &obj in &outcome.trace[1..] {
                    t += 1;
                    trace.push(TracePoint {
                        k_nz: k_end,
                        iteration: t,
                        objective: obj,
                    });
                }
                let obj = outcome.objective();
                debug!(
                    "level K={k_start}: {} iterations, K_nz={k_end}, objective {obj:.6}, converged={}",
                    outcome.iterations, outcome.converged
                );
                levels.push(LevelRecord {
                    k_start,
                    k_end,
                    iterations: outcome.iterations,
                    converged: outcome.converged,
                    objective: Some(obj),
                });
                if k_end >= config.k_min && best.as_ref().is_none_or(|(b, _)| obj > *b) {
                    best = Some((obj, outcome.model.clone()));
                }
                model = outcome.model;
            }
            Err(e @ Error::Degenerate(_)) => {
                debug!("level K={k_start} degenerated: {e}");
                levels.push(LevelRecord {
                    k_start,
                    k_end: 0,
                    iterations: 0,
                    converged: false,
                    objective: None,
                });
                last_error = Some(e);
            }
            Err(e) => return Err(e),
        }
        if model.k_nz() <= config.k_min {
            break;
        }
        annihilate_smallest(&mut model);
    }

    let Some((best_objective, best_model)) = best else {
        return Err(last_error.unwrap_or_else(|| {
            Error::Degenerate(format!("no model with at least k_min = {} components", config.k_min))
        }));
    };
    let best = best_model.nonzero();
    debug!(
        "EM selected K = {} (objective {best_objective:.6}, {t} iterations over {} levels)",
        best.k(),
        levels.len()
    );
    Ok(EmReport {
        k_hat: best.k(),
        best,
        best_objective,
        objective_trace: trace,
        levels,
        iterations_total: t,
    })
}
