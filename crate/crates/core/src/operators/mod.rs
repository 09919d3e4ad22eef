//! Random operators `F(x, y)` and their expectations `F̄(x) = E_mu F(x, Y)`
//! for the four asynchronous algorithms, with contraction factors, fixed
//! points and a Monte-Carlo oracle.

mod nstep;
mod oracle;
mod q;
mod tdlambda;
mod vtrace;

pub use nstep::{nstep_beta, nstep_expected, NStepTdOperator};
pub use oracle::{contraction_ratio, empirical_expected, empirical_expected_on, matrix_norm_interpolation_check, InterpolationCheck, OracleEstimate};
pub use q::{q_apply, q_beta, q_expected, QLearningOperator};
pub use tdlambda::{
    tdlambda_beta, tdlambda_expected, tdlambda_truncated_apply, tdlambda_truncation_error, tdlambda_truncation_level,
    TdLambdaOperator, TdLambdaParams,
};
pub use vtrace::{vtrace_apply, vtrace_beta, vtrace_eta, vtrace_expected, vtrace_fixed_point, VTraceOperator, VTraceParams};

use crate::chain::{stationary_distribution, FiniteChain};
use crate::error::{Assumption, Error, Result};
use crate::mdp::{policy_transition, Mdp, Policy};
use crate::norm::Norm;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    QLearning,
    VTrace,
    NStepTd,
    TdLambda,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::QLearning => "q_learning",
            Family::VTrace => "v_trace",
            Family::NStepTd => "nstep_td",
            Family::TdLambda => "td_lambda",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "q_learning" | "q" => Some(Family::QLearning),
            "v_trace" | "vtrace" => Some(Family::VTrace),
            "nstep_td" | "nstep" => Some(Family::NStepTd),
            "td_lambda" | "tdlambda" | "td_lambda_truncated" => Some(Family::TdLambda),
            _ => None,
        }
    }
}

/// An operator `F: R^d x Y -> R^d` driven by a finite lifted chain.
///
/// `apply_delta` writes `F(x, y) - x`, computed structurally (not by
/// subtraction), so that recursions built on it reproduce the direct
/// algorithm implementations bit for bit.
pub trait AsyncOperator: Sync {
    type Sample: Clone + Send + Sync + std::fmt::Debug;

    fn family(&self) -> Family;
    fn dim(&self) -> usize;
    fn norm(&self) -> Norm;
    fn apply_delta(&self, x: &[f64], y: &Self::Sample, delta: &mut [f64]);
    fn expected(&self, x: &[f64]) -> Vec<f64>;
    fn beta(&self) -> f64;
    fn fixed_point(&self) -> &[f64];
    /// `A1` with `||F(x1, y) - F(x2, y)|| <= A1 ||x1 - x2||`.
    fn lipschitz(&self) -> f64;
    /// `B1` with `||F(0, y)|| <= B1`.
    fn zero_bound(&self) -> f64;
    fn noise_chain(&self, max_states: usize) -> Result<FiniteChain<Self::Sample>>;

    fn apply(&self, x: &[f64], y: &Self::Sample) -> Vec<f64> {
        let mut d = vec![0.0; x.len()];
        self.apply_delta(x, y, &mut d);
        d.iter().zip(x).map(|(a, b)| b + a).collect()
    }
}

/// Stationary distribution of the state chain induced by `pol`.
pub fn state_stationary(mdp: &Mdp, pol: &Policy) -> Result<Vec<f64>> {
    let chain = FiniteChain::from_dense(&policy_transition(mdp, pol)?)?;
    stationary_distribution(&chain).map_err(|e| match e {
        Error::Reducible | Error::Periodic(_) => Error::assumption(Assumption::ErgodicChain, format!("state chain: {e}")),
        e => e,
    })
}

pub(crate) fn check_dim(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::dim(format!("expected a vector of length {d}, got {}", x.len())));
    }
    Ok(())
}

/// `G V + b` for the affine value-function operators.
#[derive(Debug, Clone)]
pub(crate) struct Affine {
    pub g: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn eval(&self, v: &[f64]) -> Vec<f64> {
        let n = self.b.len();
        (0..n).map(|i| self.b[i] + (0..n).map(|j| self.g[(i, j)] * v[j]).sum::<f64>()).collect()
    }

    /// Builds `I - K S (I - gamma P)` and `K S r` where `S = sum_{i<m} M^i E`.
    pub fn from_series(kappa: &[f64], m: &DMatrix<f64>, e: &DMatrix<f64>, terms: usize, gamma: f64, p: &DMatrix<f64>, r: &[f64]) -> Affine {
        let n = kappa.len();
        let mut s = DMatrix::zeros(n, n);
        let mut pow = DMatrix::identity(n, n);
        for _ in 0..terms {
            s += &pow;
            pow = &pow * m;
        }
        let s = s * e;
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(kappa));
        let ks = &k * &s;
        let g = DMatrix::identity(n, n) - &ks * (DMatrix::identity(n, n) - p * gamma);
        let b = (0..n).map(|i| (0..n).map(|j| ks[(i, j)] * r[j]).sum()).collect();
        Affine { g, b }
    }
}
