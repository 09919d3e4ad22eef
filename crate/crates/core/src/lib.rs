//! Finite-sample analysis of Markovian stochastic approximation.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: finite MDPs, policies, exact solvers and trajectory sampling.
//! * [`chain`]: stationary laws, mixing times and the lifted noise chains.
//! * [`sa`]: the generic recursion `x_{k+1} = x_k + a_k (F(x_k, Y_k) - x_k + w_k)`.
//! * [`operators`]: `F` and its expectation for Q-learning, V-trace,
//!   n-step TD and truncated TD(lambda).
//! * [`algorithms`]: the same four algorithms written directly.
//! * [`lyapunov`]: generalized Moreau envelopes and their constants.
//! * [`bounds`]: finite-sample mean-square error bounds.
//! * [`experiments`]: config-driven experiment runner, CSV and SVG output.

pub mod algorithms;
pub mod bounds;
pub mod chain;
pub mod error;
pub mod experiments;
pub mod lyapunov;
pub mod mdp;
pub mod norm;
pub mod operators;
pub mod par;
pub mod rng;
pub mod sa;

pub use error::{Assumption, Error, Result};
pub use norm::Norm;
