//! Finite discounted MDPs, policies and exact solvers.

mod generate;
mod io;
mod trajectory;

pub use generate::{random_mdp, random_policy};
pub use io::{parse_mdp, write_mdp};
pub use trajectory::{sample_trajectory, Start, Step, Trajectory, TrajectoryStream};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const ROW_TOL: f64 = 1e-12;

/// A finite MDP with per-action transition matrices and rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    /// `transitions[a][(s, s')]`
    pub transitions: Vec<DMatrix<f64>>,
    /// `rewards[(s, a)]`
    pub rewards: DMatrix<f64>,
    pub gamma: f64,
}

impl Mdp {
    pub fn new(transitions: Vec<DMatrix<f64>>, rewards: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let mdp = Mdp { transitions, rewards, gamma };
        validate_mdp(&mdp)?;
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.rewards.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.rewards.ncols()
    }

    #[inline]
    pub fn p(&self, a: usize, s: usize, s_next: usize) -> f64 {
        self.transitions[a][(s, s_next)]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[(s, a)]
    }
}

fn check_stochastic_rows(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        let row = m.row(i);
        if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidMdp(format!("row not stochastic: {what} row {i} has a negative or non-finite entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidMdp(format!("row not stochastic: {what} row {i} sums to {sum}")));
        }
    }
    Ok(())
}

pub fn validate_mdp(mdp: &Mdp) -> Result<()> {
    let ns = mdp.rewards.nrows();
    let na = mdp.rewards.ncols();
    if ns == 0 || na == 0 {
        return Err(Error::InvalidMdp("empty state or action set".into()));
    }
    if mdp.transitions.len() != na {
        return Err(Error::InvalidMdp(format!("{} transition matrices for {na} actions", mdp.transitions.len())));
    }
    for (a, p) in mdp.transitions.iter().enumerate() {
        if p.nrows() != ns || p.ncols() != ns {
            return Err(Error::InvalidMdp(format!("transition matrix for action {a} is {}x{}", p.nrows(), p.ncols())));
        }
        check_stochastic_rows(p, &format!("action {a}"))?;
    }
    for s in 0..ns {
        for a in 0..na {
            let r = mdp.rewards[(s, a)];
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidMdp(format!("reward out of range: R({s},{a}) = {r}")));
            }
        }
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        return Err(Error::InvalidMdp(format!("discount factor out of range: gamma = {} not in (0, 1)", mdp.gamma)));
    }
    Ok(())
}

/// Stochastic policy, `probs[(s, a)] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        check_stochastic_rows(&probs, "policy").map_err(|e| Error::InvalidPolicy(e.to_string()))?;
        Ok(Policy { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy { probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64) }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = DMatrix::zeros(actions.len(), num_actions);
        for (s, &a) in actions.iter().enumerate() {
            probs[(s, a)] = 1.0;
        }
        Policy { probs }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Smallest action probability over all state-action pairs.
    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_shape(&self, mdp: &Mdp) -> Result<()> {
        if self.num_states() != mdp.num_states() || self.num_actions() != mdp.num_actions() {
            return Err(Error::dim(format!(
                "policy is {}x{} but MDP has {} states and {} actions",
                self.num_states(),
                self.num_actions(),
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

/// State-major Q table: index `s * |A| + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QFunction {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QFunction { num_states, num_actions, values: vec![0.0; num_states * num_actions] }
    }

    pub fn from_vec(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::dim(format!("Q table needs {} entries, got {}", num_states * num_actions, values.len())));
        }
        Ok(QFunction { num_states, num_actions, values })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn max_action_value(&self, s: usize) -> f64 {
        row_max(&self.values[s * self.num_actions..(s + 1) * self.num_actions])
    }

    /// Greedy policy, ties broken towards the lowest action index.
    pub fn greedy(&self) -> Policy {
        let actions: Vec<usize> = (0..self.num_states)
            .map(|s| {
                let row = &self.values[s * self.num_actions..(s + 1) * self.num_actions];
                let mut best = 0;
                for (a, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect();
        Policy::deterministic(&actions, self.num_actions)
    }
}

#[inline]
pub(crate) fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Bellman optimality operator `H(Q)(s,a) = R(s,a) + gamma * E max_a' Q(s',a')`.
pub fn bellman_optimality(mdp: &Mdp, q: &QFunction) -> Result<QFunction> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if q.num_states != ns || q.num_actions != na {
        return Err(Error::dim("Q table shape does not match the MDP"));
    }
    Ok(bellman_optimality_raw(mdp, &q.values))
}

pub(crate) fn bellman_optimality_raw(mdp: &Mdp, q: &[f64]) -> QFunction {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let vmax: Vec<f64> = (0..ns).map(|s| row_max(&q[s * na..(s + 1) * na])).collect();
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let p = &mdp.transitions[a];
            let ev: f64 = (0..ns).map(|t| p[(s, t)] * vmax[t]).sum();
            out[s * na + a] = mdp.r(s, a) + mdp.gamma * ev;
        }
    }
    QFunction { num_states: ns, num_actions: na, values: out }
}

/// `P_pi(s, s') = sum_a pi(a|s) P_a(s, s')`.
pub fn policy_transition(mdp: &Mdp, pol: &Policy) -> Result<DMatrix<f64>> {
    pol.check_shape(mdp)?;
    let ns = mdp.num_states();
    Ok(DMatrix::from_fn(ns, ns, |s, t| (0..mdp.num_actions()).map(|a| pol.prob(s, a) * mdp.p(a, s, t)).sum()))
}

/// `R_pi(s) = sum_a pi(a|s) R(s, a)`.
pub fn policy_reward(mdp: &Mdp, pol: &Policy) -> Result<Vec<f64>> {
    pol.check_shape(mdp)?;
    Ok((0..mdp.num_states()).map(|s| (0..mdp.num_actions()).map(|a| pol.prob(s, a) * mdp.r(s, a)).sum()).collect())
}

/// Exact policy evaluation: solves `(I - gamma P_pi) V = R_pi`.
pub fn solve_value_function(mdp: &Mdp, pol: &Policy) -> Result<ValueFunction> {
    let p = policy_transition(mdp, pol)?;
    let r = policy_reward(mdp, pol)?;
    let values = solve_affine_fixed_point(&(p * mdp.gamma), &r)?;
    Ok(ValueFunction { values })
}

/// Solves `x = M x + b` for `x` by LU with one step of iterative refinement.
pub(crate) fn solve_affine_fixed_point(m: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let a = DMatrix::identity(n, n) - m;
    let lu = a.clone().lu();
    let rhs = DVector::from_column_slice(b);
    let mut x = lu.solve(&rhs).ok_or_else(|| Error::NotConverged("singular linear system".into()))?;
    let resid = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    Ok(x.iter().copied().collect())
}

/// Value iteration to `||Q_{t+1} - Q_t||_inf <= 1e-12`; returns `Q*` and the
/// greedy policy (ties to the lowest action index).
pub fn solve_optimal_q(mdp: &Mdp) -> Result<(QFunction, Policy)> {
    let mut q = QFunction::zeros(mdp.num_states(), mdp.num_actions());
    for _ in 0..1_000_000 {
        let next = bellman_optimality_raw(mdp, &q.values);
        let diff = sup_dist(&next.values, &q.values);
        q = next;
        if diff <= 1e-12 {
            let pol = q.greedy();
            return Ok((q, pol));
        }
    }
    Err(Error::NotConverged("value iteration hit 1e6 iterations".into()))
}

pub(crate) fn sup_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
