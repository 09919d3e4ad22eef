use super::{check_dim, state_stationary, Affine, AsyncOperator, Family};
use crate::chain::{lift_nstep_chain, FiniteChain, PathWindow};
use crate::error::{Error, Result};
use crate::mdp::{policy_reward, policy_transition, solve_value_function, Mdp, Policy, ValueFunction};
use crate::norm::Norm;
use nalgebra::DMatrix;

/// On-policy n-step TD. The update is the discounted sum of one-step
/// temporal differences along the window, which telescopes to
/// `sum_{i<n} gamma^i R_i + gamma^n V(s_n) - V(s_0)`.
#[derive(Debug, Clone)]
pub struct NStepTdOperator {
    pub mdp: Mdp,
    pub target: Policy,
    pub n: usize,
    pub kappa: Vec<f64>,
    affine: Affine,
    v_pi: Vec<f64>,
}

impl NStepTdOperator {
    pub fn new(mdp: &Mdp, target: &Policy, n: usize) -> Result<Self> {
        target.check_shape(mdp)?;
        if n == 0 {
            return Err(Error::arg("n must be at least 1"));
        }
        let kappa = state_stationary(mdp, target)?;
        let p = policy_transition(mdp, target)?;
        let ns = mdp.num_states();
        let affine =
            Affine::from_series(&kappa, &(&p * mdp.gamma), &DMatrix::identity(ns, ns), n, mdp.gamma, &p, &policy_reward(mdp, target)?);
        let v_pi = solve_value_function(mdp, target)?.values;
        Ok(NStepTdOperator { mdp: mdp.clone(), target: target.clone(), n, kappa, affine, v_pi })
    }

    pub fn k_min(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `G = I - K sum_{i<n} (gamma P)^i (I - gamma P)`, entrywise nonnegative.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.affine.g
    }
}

impl AsyncOperator for NStepTdOperator {
    type Sample = PathWindow;

    fn family(&self) -> Family {
        Family::NStepTd
    }

    fn dim(&self) -> usize {
        self.mdp.num_states()
    }

    fn norm(&self) -> Norm {
        Norm::L2
    }

    #[inline]
    fn apply_delta(&self, v: &[f64], y: &PathWindow, delta: &mut [f64]) {
        delta.iter_mut().for_each(|d| *d = 0.0);
        let gamma = self.mdp.gamma;
        let mut disc = 1.0;
        let mut acc = 0.0;
        for i in 0..self.n {
            let (s, a, t) = (y.states[i], y.actions[i], y.states[i + 1]);
            let td = self.mdp.r(s, a) + gamma * v[t] - v[s];
            acc += disc * td;
            disc *= gamma;
        }
        delta[y.states[0]] = acc;
    }

    fn expected(&self, v: &[f64]) -> Vec<f64> {
        self.affine.eval(v)
    }

    fn beta(&self) -> f64 {
        1.0 - self.k_min() * (1.0 - self.mdp.gamma.powi(self.n as i32))
    }

    fn fixed_point(&self) -> &[f64] {
        &self.v_pi
    }

    fn lipschitz(&self) -> f64 {
        3.0
    }

    fn zero_bound(&self) -> f64 {
        1.0 / (1.0 - self.mdp.gamma)
    }

    fn noise_chain(&self, max_states: usize) -> Result<FiniteChain<PathWindow>> {
        lift_nstep_chain(&self.mdp, &self.target, self.n, max_states)
    }
}

pub fn nstep_expected(v: &ValueFunction, mdp: &Mdp, target: &Policy, n: usize) -> Result<ValueFunction> {
    let op = NStepTdOperator::new(mdp, target, n)?;
    check_dim(&v.values, op.dim())?;
    Ok(ValueFunction { values: op.expected(&v.values) })
}

/// Returns `beta_3 = 1 - K_min (1 - gamma^n)` and `G`, after checking that
/// both the max-row-sum and max-column-sum norms of `G` equal `beta_3`.
pub fn nstep_beta(mdp: &Mdp, target: &Policy, n: usize) -> Result<(f64, DMatrix<f64>)> {
    let op = NStepTdOperator::new(mdp, target, n)?;
    let beta = op.beta();
    let g = op.matrix().clone();
    let ns = g.nrows();
    let inf = (0..ns).map(|i| g.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let one = (0..ns).map(|j| g.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if (inf - beta).abs() > 1e-12 || (one - beta).abs() > 1e-12 {
        return Err(Error::NotConverged(format!("norm identities failed: |G|_inf = {inf}, |G|_1 = {one}, beta = {beta}")));
    }
    Ok((beta, g))
}
