use super::{check_dim, state_stationary, Affine, AsyncOperator, Family};
use crate::chain::{lift_trace_chain, FiniteChain, TraceWindow};
use crate::error::{Error, Result};
use crate::mdp::{policy_reward, policy_transition, solve_value_function, Mdp, Policy, ValueFunction};
use crate::norm::Norm;
use nalgebra::DMatrix;

/// `tau = min { k >= 0 : (gamma lambda)^(k+1) <= alpha }`.
pub fn tdlambda_truncation_level(gamma: f64, lambda: f64, alpha: f64) -> Result<usize> {
    let gl = gamma * lambda;
    if !(gl > 0.0 && gl < 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg("need gamma * lambda in (0, 1) and alpha in (0, 1)"));
    }
    let mut k = 0usize;
    while gl.powi(k as i32 + 1) > alpha {
        k += 1;
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdLambdaParams {
    pub lambda: f64,
    pub tau: usize,
    pub alpha: f64,
}

impl TdLambdaParams {
    pub fn from_alpha(gamma: f64, lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::arg(format!("lambda = {lambda} must lie in (0, 1)")));
        }
        Ok(TdLambdaParams { lambda, tau: tdlambda_truncation_level(gamma, lambda, alpha)?, alpha })
    }
}

/// Truncated TD(lambda): the eligibility trace keeps only the last `tau + 1`
/// visited states.
#[derive(Debug, Clone)]
pub struct TdLambdaOperator {
    pub mdp: Mdp,
    pub target: Policy,
    pub params: TdLambdaParams,
    pub kappa: Vec<f64>,
    affine: Affine,
    v_pi: Vec<f64>,
}

impl TdLambdaOperator {
    pub fn new(mdp: &Mdp, target: &Policy, params: TdLambdaParams) -> Result<Self> {
        target.check_shape(mdp)?;
        if !(params.lambda > 0.0 && params.lambda < 1.0) {
            return Err(Error::arg(format!("lambda = {} must lie in (0, 1)", params.lambda)));
        }
        let kappa = state_stationary(mdp, target)?;
        let p = policy_transition(mdp, target)?;
        let ns = mdp.num_states();
        let affine = Affine::from_series(
            &kappa,
            &(&p * (mdp.gamma * params.lambda)),
            &DMatrix::identity(ns, ns),
            params.tau + 1,
            mdp.gamma,
            &p,
            &policy_reward(mdp, target)?,
        );
        let v_pi = solve_value_function(mdp, target)?.values;
        Ok(TdLambdaOperator { mdp: mdp.clone(), target: target.clone(), params, kappa, affine, v_pi })
    }

    pub fn k_min(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.affine.g
    }

    fn gamma_lambda(&self) -> f64 {
        self.mdp.gamma * self.params.lambda
    }
}

#[inline]
fn gamma4(mdp: &Mdp, v: &[f64], s: usize, a: usize, t: usize) -> f64 {
    mdp.r(s, a) + mdp.gamma * v[t] - v[s]
}

/// Adds `scale * sum_i (gamma lambda)^(k - i) e_{s_i}` over the visited
/// states of the window, newest with weight 1.
fn add_trace(window: &TraceWindow, gl: f64, scale: f64, out: &mut [f64]) {
    let visited = &window.states[..window.states.len() - 1];
    let mut w = 1.0;
    for &s in visited.iter().rev() {
        out[s] += scale * w;
        w *= gl;
    }
}

impl AsyncOperator for TdLambdaOperator {
    type Sample = TraceWindow;

    fn family(&self) -> Family {
        Family::TdLambda
    }

    fn dim(&self) -> usize {
        self.mdp.num_states()
    }

    fn norm(&self) -> Norm {
        Norm::L2
    }

    #[inline]
    fn apply_delta(&self, v: &[f64], y: &TraceWindow, delta: &mut [f64]) {
        delta.iter_mut().for_each(|d| *d = 0.0);
        let g = gamma4(&self.mdp, v, y.current_state(), y.action, y.next_state());
        add_trace(y, self.gamma_lambda(), g, delta);
    }

    fn expected(&self, v: &[f64]) -> Vec<f64> {
        self.affine.eval(v)
    }

    fn beta(&self) -> f64 {
        let gl = self.gamma_lambda();
        1.0 - self.k_min() * (1.0 - self.mdp.gamma) * (1.0 - gl.powi(self.params.tau as i32 + 1)) / (1.0 - gl)
    }

    fn fixed_point(&self) -> &[f64] {
        &self.v_pi
    }

    fn lipschitz(&self) -> f64 {
        3.0 / (1.0 - self.gamma_lambda())
    }

    fn zero_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma_lambda())
    }

    fn noise_chain(&self, max_states: usize) -> Result<FiniteChain<TraceWindow>> {
        lift_trace_chain(&self.mdp, &self.target, self.params.tau, max_states)
    }
}

fn check_window(mdp: &Mdp, w: &TraceWindow) -> Result<()> {
    if w.states.len() < 2 || w.action >= mdp.num_actions() || w.states.iter().any(|s| *s >= mdp.num_states()) {
        return Err(Error::arg("malformed trace window"));
    }
    Ok(())
}

/// Truncated TD(lambda) update on a window of `tau + 2` states.
pub fn tdlambda_truncated_apply(mdp: &Mdp, v: &ValueFunction, window: &TraceWindow, params: &TdLambdaParams) -> Result<ValueFunction> {
    check_dim(&v.values, mdp.num_states())?;
    check_window(mdp, window)?;
    if window.states.len() != params.tau + 2 {
        return Err(Error::arg(format!("window holds {} states, expected tau + 2 = {}", window.states.len(), params.tau + 2)));
    }
    let mut out = v.values.clone();
    let g = gamma4(mdp, &v.values, window.current_state(), window.action, window.next_state());
    add_trace(window, mdp.gamma * params.lambda, g, &mut out);
    Ok(ValueFunction { values: out })
}

pub fn tdlambda_expected(v: &ValueFunction, mdp: &Mdp, target: &Policy, lambda: f64, tau: usize) -> Result<ValueFunction> {
    let op = TdLambdaOperator::new(mdp, target, TdLambdaParams { lambda, tau, alpha: f64::NAN })?;
    check_dim(&v.values, op.dim())?;
    Ok(ValueFunction { values: op.expected(&v.values) })
}

/// `beta_4 = 1 - K_min (1 - gamma)(1 - (gamma lambda)^(tau+1)) / (1 - gamma lambda)`.
pub fn tdlambda_beta(mdp: &Mdp, target: &Policy, lambda: f64, tau: usize) -> Result<f64> {
    Ok(TdLambdaOperator::new(mdp, target, TdLambdaParams { lambda, tau, alpha: f64::NAN })?.beta())
}

/// Compares the full-trace update on `history = (s_0, ..., s_k, a_k, s_{k+1})`
/// with the truncated one on its suffix `truncated`. Returns the actual
/// Euclidean difference and the bound
/// `(gamma lambda)^(tau+1) / (1 - gamma lambda) * (1 + 2 ||V||_2)`.
pub fn tdlambda_truncation_error(
    mdp: &Mdp,
    lambda: f64,
    v: &ValueFunction,
    history: &TraceWindow,
    truncated: &TraceWindow,
) -> Result<(f64, f64)> {
    check_dim(&v.values, mdp.num_states())?;
    check_window(mdp, history)?;
    check_window(mdp, truncated)?;
    let (h, t) = (&history.states, &truncated.states);
    if t.len() > h.len() || history.action != truncated.action || h[h.len() - t.len()..] != t[..] {
        return Err(Error::arg("truncated window is not a suffix of the history"));
    }
    let gl = mdp.gamma * lambda;
    let tau = t.len() - 2;
    let g = gamma4(mdp, &v.values, history.current_state(), history.action, history.next_state());
    let mut full = vec![0.0; v.values.len()];
    let mut cut = vec![0.0; v.values.len()];
    add_trace(history, gl, g, &mut full);
    add_trace(truncated, gl, g, &mut cut);
    let actual = Norm::L2.dist(&full, &cut);
    let bound = gl.powi(tau as i32 + 1) / (1.0 - gl) * (1.0 + 2.0 * Norm::L2.of(&v.values));
    Ok((actual, bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_levels() {
        assert_eq!(tdlambda_truncation_level(1.0, 0.5, 0.1).unwrap(), 3);
        assert_eq!(tdlambda_truncation_level(0.9, 1.0, 0.01).unwrap(), 43);
        assert_eq!(tdlambda_truncation_level(0.5, 0.5, 0.3).unwrap(), 0);
    }

    #[test]
    fn repeated_state_error_is_geometric_tail() {
        let mdp = Mdp::new(vec![DMatrix::from_element(1, 1, 1.0)], DMatrix::from_element(1, 1, 1.0), 0.8).unwrap();
        let lambda = 0.5;
        let k = 10;
        let tau = 3;
        let history = TraceWindow { states: vec![0; k + 2], action: 0 };
        let truncated = TraceWindow { states: vec![0; tau + 2], action: 0 };
        let v = ValueFunction { values: vec![0.0] };
        let (actual, bound) = tdlambda_truncation_error(&mdp, lambda, &v, &history, &truncated).unwrap();
        let gl: f64 = 0.4;
        let expect: f64 = (0..k - tau).map(|i| gl.powi((k - i) as i32)).sum();
        assert!((actual - expect).abs() < 1e-15);
        assert!(actual < bound);
    }

    #[test]
    fn window_weights() {
        let mdp = Mdp::new(vec![DMatrix::from_element(1, 1, 1.0)], DMatrix::from_element(1, 1, 1.0), 0.5).unwrap();
        let params = TdLambdaParams { lambda: 0.5, tau: 2, alpha: 0.1 };
        let w = TraceWindow { states: vec![0; 4], action: 0 };
        let out = tdlambda_truncated_apply(&mdp, &ValueFunction { values: vec![0.0] }, &w, &params).unwrap();
        assert!((out.values[0] - (1.0 + 0.25 + 0.0625)).abs() < 1e-15);
        let bad = TraceWindow { states: vec![0; 3], action: 0 };
        assert!(tdlambda_truncated_apply(&mdp, &ValueFunction { values: vec![0.0] }, &bad, &params).is_err());
    }
}
