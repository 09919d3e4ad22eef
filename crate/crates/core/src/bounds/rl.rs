use std::f64::consts::E;

use super::{check_diminishing, first_valid_iteration, BoundTerms};
use crate::chain::{lift_q_chain, FiniteChain, MixingProfile};
use crate::error::{Assumption, Error, Result};
use crate::mdp::{policy_transition, solve_optimal_q, solve_value_function, Mdp, Policy, QFunction, ValueFunction};
use crate::norm::Norm;
use crate::operators::{nstep_beta, q_beta, tdlambda_beta, vtrace_beta, vtrace_eta, vtrace_fixed_point, Family, TdLambdaParams, VTraceParams};
use crate::sa::{max_admissible_stepsize, StepsizeSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    /// Replace `||x*||` by its worst case (`1/(1-gamma)` in linf,
    /// `sqrt(|S|)/(1-gamma)` in l2) instead of the solved value.
    pub norm_upper_bound: bool,
    /// Numerical constant in the TD(lambda) stepsize condition.
    pub td_lambda_c0: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions { norm_upper_bound: false, td_lambda_c0: 1.0 / 3648.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Q { log_sa: f64, star: f64 },
    VTrace { log_s: f64, factor: f64, star: f64, n: usize },
    NStep { n: usize, star: f64 },
    TdLambda { gl: f64, tau: usize, alpha: f64, star: f64, c0: f64 },
}

/// Everything needed to evaluate one algorithm's finite-sample bounds on a
/// fixed instance: contraction factor, solved fixed point, mixing profile of
/// the relevant chain and the initial-condition constant.
#[derive(Debug, Clone)]
pub struct FamilyBound {
    pub family: Family,
    pub beta: f64,
    pub gamma: f64,
    pub mixing: MixingProfile,
    /// `(||x0 - x*|| + ||x0|| + b)^2` with the family's offset `b`.
    pub c1: f64,
    params: Params,
}

fn star_norm(exact: f64, worst: f64, opts: &BoundOptions) -> f64 {
    if opts.norm_upper_bound {
        worst
    } else {
        exact
    }
}

fn state_mixing(mdp: &Mdp, pol: &Policy) -> Result<MixingProfile> {
    MixingProfile::new(&FiniteChain::from_dense(&policy_transition(mdp, pol)?)?)
}

fn init_constant(norm: Norm, x0: &[f64], star: &[f64], offset: f64) -> Result<f64> {
    if x0.len() != star.len() {
        return Err(Error::dim(format!("expected length {}, got {}", star.len(), x0.len())));
    }
    Ok((norm.dist(x0, star) + norm.of(x0) + offset).powi(2))
}

impl FamilyBound {
    pub fn q_learning(mdp: &Mdp, behavior: &Policy, q0: &QFunction, opts: &BoundOptions) -> Result<Self> {
        let beta = q_beta(mdp, behavior)?;
        let (q_star, _) = solve_optimal_q(mdp)?;
        let mixing = MixingProfile::new(&lift_q_chain(mdp, behavior)?)?;
        let c1 = 3.0 * init_constant(Norm::LInf, &q0.values, &q_star.values, 1.0)?;
        let star = star_norm(Norm::LInf.of(&q_star.values), 1.0 / (1.0 - mdp.gamma), opts);
        let log_sa = ((mdp.num_states() * mdp.num_actions()) as f64).ln();
        Ok(FamilyBound { family: Family::QLearning, beta, gamma: mdp.gamma, mixing, c1, params: Params::Q { log_sa, star } })
    }

    pub fn vtrace(mdp: &Mdp, params: &VTraceParams, v0: &ValueFunction, opts: &BoundOptions) -> Result<Self> {
        let beta = vtrace_beta(mdp, params)?;
        let v_star = vtrace_fixed_point(mdp, params)?;
        let mixing = state_mixing(mdp, &params.behavior)?;
        let c1 = 3.0 * init_constant(Norm::LInf, &v0.values, &v_star.values, 1.0)?;
        let star = star_norm(Norm::LInf.of(&v_star.values), 1.0 / (1.0 - mdp.gamma), opts);
        let eta = vtrace_eta(mdp.gamma, params.c_bar, params.n);
        let factor = (params.rho_bar + 1.0).powi(2) * eta * eta;
        let log_s = (mdp.num_states() as f64).ln();
        Ok(FamilyBound {
            family: Family::VTrace,
            beta,
            gamma: mdp.gamma,
            mixing,
            c1,
            params: Params::VTrace { log_s, factor, star, n: params.n },
        })
    }

    pub fn nstep(mdp: &Mdp, target: &Policy, n: usize, v0: &ValueFunction, opts: &BoundOptions) -> Result<Self> {
        let (beta, _) = nstep_beta(mdp, target, n)?;
        let v_pi = solve_value_function(mdp, target)?;
        let mixing = state_mixing(mdp, target)?;
        let c1 = init_constant(Norm::L2, &v0.values, &v_pi.values, 4.0)?;
        let worst = (mdp.num_states() as f64).sqrt() / (1.0 - mdp.gamma);
        let star = star_norm(Norm::L2.of(&v_pi.values), worst, opts);
        Ok(FamilyBound { family: Family::NStepTd, beta, gamma: mdp.gamma, mixing, c1, params: Params::NStep { n, star } })
    }

    /// TD(lambda) bounds are stated for one constant stepsize, which also
    /// fixes the truncation level `tau`.
    pub fn td_lambda(mdp: &Mdp, target: &Policy, lambda: f64, alpha: f64, v0: &ValueFunction, opts: &BoundOptions) -> Result<Self> {
        let params = TdLambdaParams::from_alpha(mdp.gamma, lambda, alpha)?;
        if !(opts.td_lambda_c0 > 0.0 && opts.td_lambda_c0.is_finite()) {
            return Err(Error::arg("TD(lambda) constant c0 must be positive"));
        }
        let beta = tdlambda_beta(mdp, target, lambda, params.tau)?;
        let v_pi = solve_value_function(mdp, target)?;
        let mixing = state_mixing(mdp, target)?;
        let c1 = init_constant(Norm::L2, &v0.values, &v_pi.values, 1.0)?;
        let worst = (mdp.num_states() as f64).sqrt() / (1.0 - mdp.gamma);
        let star = star_norm(Norm::L2.of(&v_pi.values), worst, opts);
        Ok(FamilyBound {
            family: Family::TdLambda,
            beta,
            gamma: mdp.gamma,
            mixing,
            c1,
            params: Params::TdLambda { gl: mdp.gamma * lambda, tau: params.tau, alpha, star, c0: opts.td_lambda_c0 },
        })
    }

    /// Truncation level for TD(lambda), `None` for the other families.
    pub fn tau(&self) -> Option<usize> {
        match self.params {
            Params::TdLambda { tau, .. } => Some(tau),
            _ => None,
        }
    }

    /// Samples beyond the mixing time before the bound applies: 0, `n`, or
    /// `2 tau + 1`.
    pub fn lookahead(&self) -> usize {
        match self.params {
            Params::Q { .. } => 0,
            Params::VTrace { n, .. } | Params::NStep { n, .. } => n,
            Params::TdLambda { tau, .. } => 2 * tau + 1,
        }
    }

    /// Right-hand side of the stepsize condition `alpha (t_alpha + lookahead) <= threshold`.
    pub fn threshold(&self) -> f64 {
        let gap = 1.0 - self.beta;
        match self.params {
            Params::Q { log_sa, .. } => gap * gap / (8208.0 * E * log_sa),
            Params::VTrace { log_s, factor, .. } => gap * gap / (7296.0 * E * factor * log_s),
            Params::NStep { .. } => gap / 3648.0,
            Params::TdLambda { gl, c0, .. } => c0 * gap * (1.0 - gl).powi(2),
        }
    }

    pub fn window(&self, alpha: f64) -> usize {
        self.mixing.mixing_time(alpha) + self.lookahead()
    }

    /// First iteration covered by the constant-stepsize bound.
    pub fn first_k(&self, alpha: f64) -> usize {
        self.window(alpha)
    }

    pub fn admissible(&self, alpha: f64) -> bool {
        alpha > 0.0 && alpha < 1.0 && alpha * self.window(alpha) as f64 <= self.threshold()
    }

    /// Largest constant stepsize meeting the family's stepsize condition.
    /// For TD(lambda) the truncation level stays the one fixed at
    /// construction.
    pub fn max_constant_stepsize(&self) -> Result<f64> {
        max_admissible_stepsize(self.threshold(), &|a| self.window(a))
    }

    /// Coefficient of the bias decay, `1 - rate * alpha`.
    fn rate(&self) -> f64 {
        match self.params {
            Params::Q { .. } | Params::VTrace { .. } => (1.0 - self.beta) / 2.0,
            _ => 1.0 - self.beta,
        }
    }

    /// Constant-stepsize bound on `E ||x_k - x*||^2` in the family's norm.
    pub fn constant(&self, alpha: f64, k: usize) -> Result<BoundTerms> {
        if let Params::TdLambda { alpha: fixed, .. } = self.params {
            if alpha != fixed {
                return Err(Error::arg(format!("this TD(lambda) bound was built for alpha = {fixed}, got {alpha}")));
            }
        }
        if !self.admissible(alpha) {
            return Err(Error::assumption(
                Assumption::StepsizeBudget,
                format!(
                    "alpha (t_alpha + {}) = {:.4e} exceeds the {} threshold {:.4e}",
                    self.lookahead(),
                    alpha * self.window(alpha) as f64,
                    self.family.name(),
                    self.threshold()
                ),
            ));
        }
        let t = self.mixing.mixing_time(alpha);
        let start = self.first_k(alpha);
        if k < start {
            return Err(Error::arg(format!("bound holds for k >= {start}, got k = {k}")));
        }
        let bias = self.c1 * (1.0 - self.rate() * alpha).powf((k - start) as f64);
        let gap = 1.0 - self.beta;
        let tf = t as f64;
        let variance = match self.params {
            Params::Q { log_sa, star } => 912.0 * E * (3.0 * star + 1.0).powi(2) * log_sa / (gap * gap) * alpha * tf,
            Params::VTrace { log_s, factor, star, n } => {
                3648.0 * E * (star + 1.0).powi(2) * log_s * factor / (gap * gap) * alpha * (tf + n as f64)
            }
            Params::NStep { n, star } => {
                let g = self.gamma;
                228.0 * (4.0 * (1.0 - g) * star + 1.0).powi(2) * alpha * (tf + n as f64) / ((1.0 - g).powi(2) * gap)
            }
            Params::TdLambda { gl, tau, star, .. } => {
                114.0 * (4.0 * star + 1.0).powi(2) * alpha * (tf + tau as f64 + 1.0) / ((1.0 - gl).powi(2) * gap)
            }
        };
        Ok(BoundTerms::new(bias, variance))
    }

    pub fn constant_curve(&self, alpha: f64, ks: &[usize]) -> Result<Vec<BoundTerms>> {
        ks.iter().map(|&k| self.constant(alpha, k)).collect()
    }

    /// Diminishing-stepsize bounds at each `k` in `ks` (sorted ascending).
    ///
    /// Supported: Q-learning with linear stepsize `alpha (1 - beta) in {1, 2, 4}`
    /// or any polynomial stepsize; V-trace with `alpha (1 - beta) = 4`;
    /// n-step TD with `alpha (1 - beta) = 2`. `K'` is the first `k` with
    /// `k >= t_k + lookahead`, and the stepsize condition is verified on
    /// `[0, max ks]`.
    pub fn diminishing_curve(&self, schedule: &StepsizeSchedule, ks: &[usize]) -> Result<Vec<BoundTerms>> {
        schedule.validate()?;
        if ks.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::arg("checkpoints must be sorted"));
        }
        let gap = 1.0 - self.beta;
        let scaled = schedule.alpha() * gap;
        let near = |target: f64| (scaled - target).abs() <= 1e-9 * target;
        let unsupported = || {
            Error::arg(format!(
                "no diminishing-stepsize bound for {} with {schedule:?} (alpha (1 - beta) = {scaled:.6})",
                self.family.name()
            ))
        };
        let variant = match (&self.params, schedule) {
            (Params::Q { .. }, StepsizeSchedule::Linear { .. }) if near(1.0) => 1,
            (Params::Q { .. }, StepsizeSchedule::Linear { .. }) if near(2.0) => 2,
            (Params::Q { .. }, StepsizeSchedule::Linear { .. }) if near(4.0) => 4,
            (Params::Q { .. }, StepsizeSchedule::Polynomial { .. }) => 0,
            (Params::VTrace { .. }, StepsizeSchedule::Linear { .. }) if near(4.0) => 4,
            (Params::NStep { .. }, StepsizeSchedule::Linear { .. }) if near(2.0) => 2,
            (Params::TdLambda { .. }, _) => {
                return Err(Error::arg("TD(lambda) bounds cover constant stepsizes only"));
            }
            _ => return Err(unsupported()),
        };
        let mix = |d: f64| self.mixing.mixing_time(d);
        let look = self.lookahead();
        let k_first = first_valid_iteration(schedule, &mix, look)?;
        if let Some(&k) = ks.first() {
            if k < k_first {
                return Err(Error::arg(format!("bound holds for k >= K' = {k_first}, got k = {k}")));
            }
        }
        if let Some(&last) = ks.last() {
            check_diminishing(schedule, &mix, look, self.threshold(), k_first, last)?;
        }
        let h = match *schedule {
            StepsizeSchedule::Linear { h, .. } | StepsizeSchedule::Polynomial { h, .. } => h,
            StepsizeSchedule::Constant { .. } => unreachable!(),
        };
        let k0h = k_first as f64 + h;
        let out = ks
            .iter()
            .map(|&k| {
                let kh = k as f64 + h;
                let t = mix(schedule.at(k)) as f64;
                match (&self.params, variant) {
                    (Params::Q { log_sa, star }, v) => {
                        let c2 = 3648.0 * E * (3.0 * star + 1.0).powi(2) * log_sa;
                        match v {
                            1 => BoundTerms::new(self.c1 * (k0h / kh).sqrt(), 2.0 * c2 / gap.powi(3) * t / kh),
                            2 => BoundTerms::new(self.c1 * k0h / kh, 4.0 * c2 / gap.powi(3) * t * kh.ln() / kh),
                            4 => BoundTerms::new(self.c1 * (k0h / kh).powi(2), 16.0 * c2 / gap.powi(3) * t / kh),
                            _ => {
                                let (alpha, xi) = match *schedule {
                                    StepsizeSchedule::Polynomial { alpha, xi, .. } => (alpha, xi),
                                    _ => unreachable!(),
                                };
                                let expo = -gap * alpha / (2.0 * (1.0 - xi)) * (kh.powf(1.0 - xi) - k0h.powf(1.0 - xi));
                                // the polynomial display divides by k + h, not (k + h)^xi
                                BoundTerms::new(self.c1 * expo.exp(), c2 / (gap * gap) * t / kh)
                            }
                        }
                    }
                    (Params::VTrace { log_s, factor, star, n }, _) => {
                        let c2 = 233472.0 * E * E * (star + 1.0).powi(2);
                        BoundTerms::new(self.c1 * k0h / kh, c2 * log_s / gap.powi(3) * factor * (t + *n as f64) / kh)
                    }
                    (Params::NStep { n, star }, _) => {
                        let g = self.gamma;
                        let c2 = 7296.0 * E * (4.0 * (1.0 - g) * star + 1.0).powi(2);
                        BoundTerms::new(self.c1 * k0h / kh, c2 * (t + *n as f64) / (gap * gap * (1.0 - g).powi(2) * kh))
                    }
                    (Params::TdLambda { .. }, _) => unreachable!(),
                }
            })
            .collect();
        Ok(out)
    }
}

/// Largest constant TD(lambda) stepsize that is admissible at its own
/// truncation level. Smaller stepsizes raise `tau`, so the search iterates
/// `alpha -> max stepsize at tau(alpha)` from `alpha = 1/2` downwards.
pub fn max_td_lambda_stepsize(mdp: &Mdp, target: &Policy, lambda: f64, v0: &ValueFunction, opts: &BoundOptions) -> Result<f64> {
    let mut alpha = 0.5;
    for _ in 0..200 {
        let b = FamilyBound::td_lambda(mdp, target, lambda, alpha, v0, opts)?;
        if b.admissible(alpha) {
            return Ok(alpha);
        }
        let next = b.max_constant_stepsize()?;
        alpha = if next < alpha { next } else { alpha * 0.5 };
    }
    Err(Error::NotConverged("no admissible TD(lambda) stepsize found".into()))
}

pub fn bound_q_constant(mdp: &Mdp, behavior: &Policy, q0: &QFunction, alpha: f64, k: usize) -> Result<BoundTerms> {
    FamilyBound::q_learning(mdp, behavior, q0, &BoundOptions::default())?.constant(alpha, k)
}

pub fn bound_vtrace_constant(mdp: &Mdp, params: &VTraceParams, v0: &ValueFunction, alpha: f64, k: usize) -> Result<BoundTerms> {
    FamilyBound::vtrace(mdp, params, v0, &BoundOptions::default())?.constant(alpha, k)
}

pub fn bound_nstep_constant(mdp: &Mdp, target: &Policy, n: usize, v0: &ValueFunction, alpha: f64, k: usize) -> Result<BoundTerms> {
    FamilyBound::nstep(mdp, target, n, v0, &BoundOptions::default())?.constant(alpha, k)
}

pub fn bound_tdlambda_constant(mdp: &Mdp, target: &Policy, lambda: f64, v0: &ValueFunction, alpha: f64, k: usize) -> Result<BoundTerms> {
    FamilyBound::td_lambda(mdp, target, lambda, alpha, v0, &BoundOptions::default())?.constant(alpha, k)
}

pub fn bound_rl_diminishing(bound: &FamilyBound, schedule: &StepsizeSchedule, k: usize) -> Result<BoundTerms> {
    Ok(bound.diminishing_curve(schedule, &[k])?[0])
}
