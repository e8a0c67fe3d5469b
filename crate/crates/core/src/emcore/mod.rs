//! Bernoulli bit-flip mixture fitted by EM with MML component annihilation.
//!
//! Each shot `y` is modelled as one of `K` centers `x_k` (chosen with
//! probability `alpha_k`) with bit `j` flipped independently with
//! probability `eps_j < 0.5`. The penalized objective is maximized; the
//! weight update drops components whose responsibility mass is at most
//! `n/2`, and an outer loop walks `K` down from `k_max` to `k_min`, keeping
//! the best-scoring model.

mod init;
mod likelihood;
mod model;
mod modelfile;
mod run;
mod steps;

pub use init::kmeanspp_init;
pub use likelihood::{log_component_likelihood, log_likelihood, log_sum_exp, mml_from_loglik, mml_objective};
pub use model::{EmConfig, EmReport, LevelRecord, MixtureModel, Responsibilities, TracePoint};
pub use modelfile::ModelFile;
pub use run::{initial_model, run_em, run_em_fixed_k, run_em_from, FixedKOutcome};
pub use steps::{
    e_step, e_step_with_loglik, m_step_alpha, m_step_alpha_plain, m_step_eps, m_step_x, mismatch_rates,
};
