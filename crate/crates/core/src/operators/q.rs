use super::{check_dim, state_stationary, AsyncOperator, Family};
use crate::chain::{lift_q_chain, FiniteChain, Transition};
use crate::error::{Error, Result};
use crate::mdp::{bellman_optimality_raw, row_max, solve_optimal_q, Mdp, Policy, QFunction};
use crate::norm::Norm;

/// Q-learning: `F(Q, (s, a, s'))` moves entry `(s, a)` by
/// `R(s, a) + gamma max_a' Q(s', a') - Q(s, a)`.
#[derive(Debug, Clone)]
pub struct QLearningOperator {
    pub mdp: Mdp,
    pub behavior: Policy,
    /// `kappa_b(s) pi_b(a | s)`, state-major.
    pub weights: Vec<f64>,
    q_star: Vec<f64>,
}

impl QLearningOperator {
    pub fn new(mdp: &Mdp, behavior: &Policy) -> Result<Self> {
        // validates full support and ergodicity
        lift_q_chain(mdp, behavior)?;
        let kappa = state_stationary(mdp, behavior)?;
        let na = mdp.num_actions();
        let weights = (0..mdp.num_states() * na).map(|i| kappa[i / na] * behavior.prob(i / na, i % na)).collect();
        let (q, _) = solve_optimal_q(mdp)?;
        Ok(QLearningOperator { mdp: mdp.clone(), behavior: behavior.clone(), weights, q_star: q.values })
    }

    pub fn n_min(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[inline]
fn gamma1(mdp: &Mdp, q: &[f64], s: usize, a: usize, t: usize) -> f64 {
    let na = mdp.num_actions();
    mdp.r(s, a) + mdp.gamma * row_max(&q[t * na..(t + 1) * na]) - q[s * na + a]
}

impl AsyncOperator for QLearningOperator {
    type Sample = Transition;

    fn family(&self) -> Family {
        Family::QLearning
    }

    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn norm(&self) -> Norm {
        Norm::LInf
    }

    #[inline]
    fn apply_delta(&self, x: &[f64], y: &Transition, delta: &mut [f64]) {
        delta.iter_mut().for_each(|d| *d = 0.0);
        delta[y.state * self.mdp.num_actions() + y.action] = gamma1(&self.mdp, x, y.state, y.action, y.next_state);
    }

    fn expected(&self, x: &[f64]) -> Vec<f64> {
        let h = bellman_optimality_raw(&self.mdp, x).values;
        x.iter().zip(&h).zip(&self.weights).map(|((q, hq), n)| n * hq + (1.0 - n) * q).collect()
    }

    fn beta(&self) -> f64 {
        1.0 - self.n_min() * (1.0 - self.mdp.gamma)
    }

    fn fixed_point(&self) -> &[f64] {
        &self.q_star
    }

    fn lipschitz(&self) -> f64 {
        2.0
    }

    fn zero_bound(&self) -> f64 {
        1.0
    }

    fn noise_chain(&self, _max_states: usize) -> Result<FiniteChain<Transition>> {
        lift_q_chain(&self.mdp, &self.behavior)
    }
}

/// One application of the random Q-learning operator.
pub fn q_apply(mdp: &Mdp, q: &QFunction, y: &Transition) -> Result<QFunction> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if q.num_states != ns || q.num_actions != na {
        return Err(Error::dim("Q table shape does not match the MDP"));
    }
    if y.state >= ns || y.next_state >= ns || y.action >= na {
        return Err(Error::arg(format!("transition {y:?} out of range")));
    }
    let mut out = q.clone();
    out.values[y.state * na + y.action] += gamma1(mdp, &q.values, y.state, y.action, y.next_state);
    Ok(out)
}

/// `N H(Q) + (I - N) Q` with `N = diag(kappa_b(s) pi_b(a|s))`.
pub fn q_expected(q: &QFunction, mdp: &Mdp, behavior: &Policy) -> Result<QFunction> {
    let op = QLearningOperator::new(mdp, behavior)?;
    check_dim(&q.values, op.dim())?;
    QFunction::from_vec(q.num_states, q.num_actions, op.expected(&q.values))
}

/// `beta_1 = 1 - N_min (1 - gamma)`.
pub fn q_beta(mdp: &Mdp, behavior: &Policy) -> Result<f64> {
    Ok(QLearningOperator::new(mdp, behavior)?.beta())
}
