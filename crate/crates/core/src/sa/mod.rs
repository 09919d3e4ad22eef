//! The Markovian stochastic-approximation recursion
//! `x_{k+1} = x_k + alpha_k (F(x_k, Y_k) - x_k + w_k)`.

mod engine;
mod mse;
mod samplers;
mod stepsize;

pub use engine::{
    combined_constants, geometric_checkpoints, iterate_drift_check, linear_checkpoints, run_sa, validate_checkpoints, write_iterates_csv, DriftCheck, MartingaleNoise,
    SaRunLog,
};
pub use mse::{monte_carlo_mse, mse_curve, MseCurve};
pub use samplers::{ChainSampler, NoiseSampler, PathWindowSampler, TraceWindowSampler, TransitionSampler};
pub use stepsize::{
    analytic_mixing_time, check_stepsize_condition, max_admissible_stepsize, max_constant_stepsize, stepsize_budget, StepsizeCheck,
    StepsizeSchedule,
};
