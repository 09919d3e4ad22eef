use super::{check_dim, state_stationary, Affine, AsyncOperator, Family};
use crate::chain::{lift_nstep_chain, FiniteChain, PathWindow};
use crate::error::{Assumption, Error, Result};
use crate::mdp::{policy_reward, policy_transition, solve_value_function, Mdp, Policy, ValueFunction};
use crate::norm::Norm;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct VTraceParams {
    pub n: usize,
    pub c_bar: f64,
    pub rho_bar: f64,
    pub target: Policy,
    pub behavior: Policy,
}

impl VTraceParams {
    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        self.target.check_shape(mdp)?;
        self.behavior.check_shape(mdp)?;
        if self.n == 0 {
            return Err(Error::arg("V-trace window n must be at least 1"));
        }
        if !(self.c_bar >= 1.0 && self.rho_bar >= self.c_bar && self.rho_bar.is_finite()) {
            return Err(Error::arg(format!("need rho_bar >= c_bar >= 1, got c_bar = {}, rho_bar = {}", self.c_bar, self.rho_bar)));
        }
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                if self.target.prob(s, a) > 0.0 && self.behavior.prob(s, a) <= 0.0 {
                    return Err(Error::assumption(
                        Assumption::Coverage,
                        format!("target takes action {a} in state {s} but the behaviour policy never does"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `eta = sum_{i<n} (gamma c_bar)^i`, exactly `n` when `gamma c_bar = 1`.
pub fn vtrace_eta(gamma: f64, c_bar: f64, n: usize) -> f64 {
    let g = gamma * c_bar;
    if g == 1.0 {
        n as f64
    } else {
        (1.0 - g.powi(n as i32)) / (1.0 - g)
    }
}

/// Policy `min(level pi_b, pi) / sum_a min(level pi_b, pi)` and its
/// normaliser.
fn clipped_policy(target: &Policy, behavior: &Policy, level: f64) -> (Policy, Vec<f64>) {
    let (ns, na) = (target.num_states(), target.num_actions());
    let m = DMatrix::from_fn(ns, na, |s, a| (level * behavior.prob(s, a)).min(target.prob(s, a)));
    let sums: Vec<f64> = (0..ns).map(|s| m.row(s).sum()).collect();
    let probs = DMatrix::from_fn(ns, na, |s, a| m[(s, a)] / sums[s]);
    (Policy { probs }, sums)
}

#[derive(Debug, Clone)]
pub struct VTraceOperator {
    pub mdp: Mdp,
    pub params: VTraceParams,
    pub kappa: Vec<f64>,
    /// `min(c_bar, pi / pi_b)` per `(s, a)`, NaN where `pi_b = 0`.
    c: Vec<f64>,
    rho: Vec<f64>,
    c_min: f64,
    d_min: f64,
    affine: Affine,
    v_rho: Vec<f64>,
}

impl VTraceOperator {
    pub fn new(mdp: &Mdp, params: &VTraceParams) -> Result<Self> {
        params.validate(mdp)?;
        let kappa = state_stationary(mdp, &params.behavior)?;
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let ratio = |level: f64| -> Vec<f64> {
            (0..ns * na)
                .map(|i| {
                    let (s, a) = (i / na, i % na);
                    let pb = params.behavior.prob(s, a);
                    if pb > 0.0 {
                        level.min(params.target.prob(s, a) / pb)
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        };
        let (pi_c, c_diag) = clipped_policy(&params.target, &params.behavior, params.c_bar);
        let (pi_rho, d_diag) = clipped_policy(&params.target, &params.behavior, params.rho_bar);
        let gamma = mdp.gamma;
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&c_diag)) * policy_transition(mdp, &pi_c)? * gamma;
        let e = DMatrix::from_diagonal(&DVector::from_column_slice(&d_diag));
        let affine = Affine::from_series(
            &kappa,
            &m,
            &e,
            params.n,
            gamma,
            &policy_transition(mdp, &pi_rho)?,
            &policy_reward(mdp, &pi_rho)?,
        );
        let v_rho = solve_value_function(mdp, &pi_rho)?.values;
        Ok(VTraceOperator {
            mdp: mdp.clone(),
            params: params.clone(),
            kappa,
            c: ratio(params.c_bar),
            rho: ratio(params.rho_bar),
            c_min: c_diag.iter().copied().fold(f64::INFINITY, f64::min),
            d_min: d_diag.iter().copied().fold(f64::INFINITY, f64::min),
            affine,
            v_rho,
        })
    }

    pub fn k_min(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn c_min(&self) -> f64 {
        self.c_min
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn eta(&self) -> f64 {
        vtrace_eta(self.mdp.gamma, self.params.c_bar, self.params.n)
    }

    pub fn c_ratio(&self, s: usize, a: usize) -> f64 {
        self.c[s * self.mdp.num_actions() + a]
    }

    pub fn rho_ratio(&self, s: usize, a: usize) -> f64 {
        self.rho[s * self.mdp.num_actions() + a]
    }

    /// `G` in `F̄(V) = G V + b`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.affine.g
    }
}

impl AsyncOperator for VTraceOperator {
    type Sample = PathWindow;

    fn family(&self) -> Family {
        Family::VTrace
    }

    fn dim(&self) -> usize {
        self.mdp.num_states()
    }

    fn norm(&self) -> Norm {
        Norm::LInf
    }

    #[inline]
    fn apply_delta(&self, v: &[f64], y: &PathWindow, delta: &mut [f64]) {
        delta.iter_mut().for_each(|d| *d = 0.0);
        let na = self.mdp.num_actions();
        let gamma = self.mdp.gamma;
        let mut disc = 1.0;
        let mut trace = 1.0;
        let mut acc = 0.0;
        for i in 0..self.params.n {
            let (s, a, t) = (y.states[i], y.actions[i], y.states[i + 1]);
            let td = self.mdp.r(s, a) + gamma * v[t] - v[s];
            acc += disc * trace * self.rho[s * na + a] * td;
            trace *= self.c[s * na + a];
            disc *= gamma;
        }
        delta[y.states[0]] = acc;
    }

    fn expected(&self, v: &[f64]) -> Vec<f64> {
        self.affine.eval(v)
    }

    fn beta(&self) -> f64 {
        let g = self.mdp.gamma;
        let gc = g * self.c_min;
        1.0 - self.k_min() * (1.0 - g) * (1.0 - gc.powi(self.params.n as i32)) * self.d_min / (1.0 - gc)
    }

    fn fixed_point(&self) -> &[f64] {
        &self.v_rho
    }

    fn lipschitz(&self) -> f64 {
        (2.0 * self.params.rho_bar + 1.0) * self.eta()
    }

    fn zero_bound(&self) -> f64 {
        self.params.rho_bar * self.eta()
    }

    fn noise_chain(&self, max_states: usize) -> Result<FiniteChain<PathWindow>> {
        lift_nstep_chain(&self.mdp, &self.params.behavior, self.params.n, max_states)
    }
}

/// One V-trace update of `V` on an `n`-step behaviour window.
pub fn vtrace_apply(mdp: &Mdp, v: &ValueFunction, y: &PathWindow, params: &VTraceParams) -> Result<ValueFunction> {
    params.validate(mdp)?;
    check_dim(&v.values, mdp.num_states())?;
    if y.actions.len() != params.n || y.states.len() != params.n + 1 {
        return Err(Error::arg(format!("window must hold {} steps", params.n)));
    }
    for i in 0..params.n {
        if params.behavior.prob(y.states[i], y.actions[i]) <= 0.0 {
            return Err(Error::assumption(
                Assumption::Coverage,
                format!("behaviour probability 0 at visited pair ({}, {})", y.states[i], y.actions[i]),
            ));
        }
    }
    let op = VTraceOperator::new(mdp, params)?;
    Ok(ValueFunction { values: op.apply(&v.values, y) })
}

pub fn vtrace_expected(v: &ValueFunction, mdp: &Mdp, params: &VTraceParams) -> Result<ValueFunction> {
    let op = VTraceOperator::new(mdp, params)?;
    check_dim(&v.values, op.dim())?;
    Ok(ValueFunction { values: op.expected(&v.values) })
}

pub fn vtrace_beta(mdp: &Mdp, params: &VTraceParams) -> Result<f64> {
    Ok(VTraceOperator::new(mdp, params)?.beta())
}

/// `V_{pi_rho}` for the clipped policy `pi_rho proportional to min(rho_bar pi_b, pi)`.
pub fn vtrace_fixed_point(mdp: &Mdp, params: &VTraceParams) -> Result<ValueFunction> {
    params.validate(mdp)?;
    let (pi_rho, _) = clipped_policy(&params.target, &params.behavior, params.rho_bar);
    solve_value_function(mdp, &pi_rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    #[test]
    fn eta_values() {
        assert!((vtrace_eta(0.5, 1.0, 3) - 1.75).abs() < 1e-15);
        assert_eq!(vtrace_eta(0.5, 2.0, 3), 3.0);
        assert_eq!(vtrace_eta(0.3, 1.7, 1), 1.0);
    }

    #[test]
    fn ratios_are_clipped() {
        let mdp = random_mdp(1, 2, 2, 2, 0.9).unwrap();
        let target = Policy::new(DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.5, 0.5])).unwrap();
        let behavior = Policy::uniform(2, 2);
        let params = VTraceParams { n: 2, c_bar: 1.0, rho_bar: 2.0, target, behavior };
        let op = VTraceOperator::new(&mdp, &params).unwrap();
        assert_eq!(op.c_ratio(0, 0), 1.0);
        assert!((op.rho_ratio(0, 0) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn coverage_is_enforced() {
        let mdp = random_mdp(1, 2, 2, 2, 0.9).unwrap();
        let params = VTraceParams {
            n: 1,
            c_bar: 1.0,
            rho_bar: 1.0,
            target: Policy::uniform(2, 2),
            behavior: Policy::deterministic(&[0, 0], 2),
        };
        assert!(VTraceOperator::new(&mdp, &params).unwrap_err().is_assumption());
    }

    #[test]
    fn fixed_point_and_large_rho() {
        let mdp = random_mdp(4, 5, 3, 3, 0.9).unwrap();
        let target = crate::mdp::random_policy(8, 5, 3);
        let behavior = Policy::uniform(5, 3);
        let params = VTraceParams { n: 3, c_bar: 1.0, rho_bar: 1.5, target: target.clone(), behavior: behavior.clone() };
        let op = VTraceOperator::new(&mdp, &params).unwrap();
        let fp = op.fixed_point().to_vec();
        let r = op.expected(&fp);
        assert!(Norm::LInf.dist(&r, &fp) < 1e-10);
        // rho_bar >= max pi/pi_b = 3 removes the clipping bias
        let params = VTraceParams { rho_bar: 3.0, ..params };
        let vp = solve_value_function(&mdp, &target).unwrap().values;
        assert!(Norm::LInf.dist(&vtrace_fixed_point(&mdp, &params).unwrap().values, &vp) < 1e-10);
    }
}
