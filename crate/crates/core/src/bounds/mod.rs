//! Finite-sample mean-square bounds for Markovian SA and the RL algorithms
//! built on it, plus sample-complexity scaling laws.
//!
//! Every evaluator returns the bias and variance parts separately.

mod complexity;
mod rl;

pub use complexity::{optimal_n, sample_complexity_nstep, sample_complexity_q, sample_complexity_vtrace, OptimalN, ScalingLaw};
pub use rl::{
    max_td_lambda_stepsize,
    bound_nstep_constant, bound_q_constant, bound_rl_diminishing, bound_tdlambda_constant, bound_vtrace_constant, BoundOptions, FamilyBound,
};

use std::io::Write;

use crate::chain::{ErgodicityFit, MixingProfile};
use crate::error::{Assumption, Error, Result};
use crate::lyapunov::PhiConstants;
use crate::norm::Norm;
use crate::sa::{stepsize_budget, StepsizeSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub bias: f64,
    pub variance: f64,
    pub total: f64,
}

impl BoundTerms {
    pub fn new(bias: f64, variance: f64) -> Self {
        BoundTerms { bias, variance, total: bias + variance }
    }
}

/// Mixing-time oracle `delta -> t_delta`.
#[derive(Debug, Clone)]
pub enum Mixing {
    Profile(MixingProfile),
    Envelope(ErgodicityFit),
    Fixed(usize),
}

impl Mixing {
    pub fn time(&self, delta: f64) -> usize {
        match self {
            Mixing::Profile(p) => p.mixing_time(delta),
            Mixing::Envelope(f) => f.mixing_bound(delta),
            Mixing::Fixed(t) => *t,
        }
    }
}

/// Constants of the generic SA bound.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub phi: PhiConstants,
    /// `(||x0 - x*||_c + ||x0||_c + B/A)^2`
    pub c1: f64,
    /// `(A ||x*||_c + B)^2`
    pub c2: f64,
    pub a: f64,
    pub b: f64,
    pub mixing: Mixing,
}

impl BoundInputs {
    pub fn new(phi: PhiConstants, a: f64, b: f64, norm: Norm, x0: &[f64], x_star: &[f64], mixing: Mixing) -> Result<Self> {
        if x0.len() != x_star.len() {
            return Err(Error::dim(format!("expected length {}, got {}", x_star.len(), x0.len())));
        }
        if !(a > 0.0 && b >= 0.0) {
            return Err(Error::arg("need A > 0 and B >= 0"));
        }
        let c1 = (norm.dist(x0, x_star) + norm.of(x0) + b / a).powi(2);
        let c2 = (a * norm.of(x_star) + b).powi(2);
        let inputs = BoundInputs { phi, c1, c2, a, b, mixing };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.phi;
        if !(p.phi1 > 0.0 && p.phi2 > 0.0 && p.phi2 < 1.0 && p.phi3 > 0.0) {
            return Err(Error::arg(format!("need phi1, phi3 > 0 and phi2 in (0, 1), got {p:?}")));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.a > 0.0) {
            return Err(Error::arg("c1, c2 and A must be positive"));
        }
        Ok(())
    }

    pub fn budget(&self) -> f64 {
        stepsize_budget(self.a, self.phi.phi2, self.phi.phi3)
    }

    /// `K = min { k : k >= t_k }` with `t_k` the mixing time at precision
    /// `alpha_k`.
    pub fn first_valid_iteration(&self, schedule: &StepsizeSchedule) -> Result<usize> {
        first_valid_iteration(schedule, &|d| self.mixing.time(d), 0)
    }
}

pub(crate) fn first_valid_iteration(schedule: &StepsizeSchedule, mixing: &dyn Fn(f64) -> usize, lookahead: usize) -> Result<usize> {
    for k in 0..=10_000_000usize {
        if k >= mixing(schedule.at(k)) + lookahead {
            return Ok(k);
        }
    }
    Err(Error::NotConverged("no k with k >= t_k below 1e7".into()))
}

/// Checks the drift condition for a diminishing schedule: the warm-up sum
/// `alpha_{0, K-1}` and every window sum `alpha_{k - w_k, k - 1}` for
/// `K <= k <= upto` stay within `budget`, where `w_k = t_{alpha_k} + lookahead`.
pub(crate) fn check_diminishing(
    schedule: &StepsizeSchedule,
    mixing: &dyn Fn(f64) -> usize,
    lookahead: usize,
    budget: f64,
    k_first: usize,
    upto: usize,
) -> Result<()> {
    let warmup = schedule.partial_sum(0, k_first.saturating_sub(1));
    if k_first > 0 && warmup > budget {
        return Err(Error::assumption(
            Assumption::StepsizeBudget,
            format!("warm-up stepsize sum {warmup:.4e} exceeds the budget {budget:.4e}; increase h"),
        ));
    }
    // prefix sums make each window O(1)
    let mut prefix = Vec::with_capacity(upto + 2);
    prefix.push(0.0);
    for i in 0..=upto {
        let last = *prefix.last().unwrap();
        prefix.push(last + schedule.at(i));
    }
    for k in k_first..=upto {
        let w = mixing(schedule.at(k)) + lookahead;
        if w == 0 || w > k {
            continue;
        }
        let sum = prefix[k] - prefix[k - w];
        if sum > budget * (1.0 + 1e-12) {
            return Err(Error::assumption(
                Assumption::StepsizeBudget,
                format!("window stepsize sum {sum:.4e} at k = {k} exceeds the budget {budget:.4e}; increase h"),
            ));
        }
    }
    Ok(())
}

/// `phi1 c1 (1 - phi2 alpha)^(k - t_alpha) + phi3 c2 alpha t_alpha / phi2`
/// without any admissibility check.
pub fn sa_constant_terms(phi: &PhiConstants, c1: f64, c2: f64, alpha: f64, t_alpha: usize, k: usize) -> BoundTerms {
    let bias = phi.phi1 * c1 * (1.0 - phi.phi2 * alpha).powf(k.saturating_sub(t_alpha) as f64);
    let variance = phi.phi3 * c2 / phi.phi2 * alpha * t_alpha as f64;
    BoundTerms::new(bias, variance)
}

/// Constant-stepsize bound, valid for `k >= t_alpha` when
/// `alpha t_alpha <= min(phi2 / (phi3 A^2), 1 / (4A))`.
pub fn bound_sa_constant(inputs: &BoundInputs, alpha: f64, k: usize) -> Result<BoundTerms> {
    inputs.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("constant stepsize must lie in (0, 1), got {alpha}")));
    }
    let t = inputs.mixing.time(alpha);
    if alpha * t as f64 > inputs.budget() {
        return Err(Error::assumption(
            Assumption::StepsizeBudget,
            format!("alpha t_alpha = {:.4e} exceeds the budget {:.4e}", alpha * t as f64, inputs.budget()),
        ));
    }
    if k < t {
        return Err(Error::arg(format!("bound holds for k >= t_alpha = {t}, got k = {k}")));
    }
    Ok(sa_constant_terms(&inputs.phi, inputs.c1, inputs.c2, alpha, t, k))
}

/// Which of the three linear-stepsize regimes applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearCase {
    /// `alpha < 1 / phi2`
    Slow,
    /// `alpha = 1 / phi2`
    Critical,
    /// `alpha > 1 / phi2`
    Fast,
}

pub fn linear_case(phi2: f64, alpha: f64) -> LinearCase {
    let r = phi2 * alpha;
    if (r - 1.0).abs() <= 1e-12 {
        LinearCase::Critical
    } else if r < 1.0 {
        LinearCase::Slow
    } else {
        LinearCase::Fast
    }
}

/// Linear-stepsize terms for `alpha_k = alpha / (k + h)` at iteration `k`,
/// given `K` and `t_k`, without admissibility checks.
#[allow(clippy::too_many_arguments)]
pub fn sa_linear_terms(phi: &PhiConstants, c1: f64, c2: f64, alpha: f64, h: f64, k_first: usize, t_k: usize, k: usize) -> BoundTerms {
    let (kh, k0h, t) = (k as f64 + h, k_first as f64 + h, t_k as f64);
    let r = phi.phi2 * alpha;
    match linear_case(phi.phi2, alpha) {
        LinearCase::Slow => BoundTerms::new(
            phi.phi1 * c1 * (k0h / kh).powf(r),
            8.0 * alpha * alpha * phi.phi3 * c2 / (1.0 - r) * t / kh.powf(r),
        ),
        LinearCase::Critical => BoundTerms::new(phi.phi1 * c1 * k0h / kh, 8.0 * alpha * alpha * phi.phi3 * c2 * t * kh.ln() / kh),
        LinearCase::Fast => BoundTerms::new(
            phi.phi1 * c1 * (k0h / kh).powf(r),
            8.0 * std::f64::consts::E * alpha * alpha * phi.phi3 * c2 / (r - 1.0) * t / kh,
        ),
    }
}

pub fn bound_sa_linear(inputs: &BoundInputs, alpha: f64, h: f64, k: usize) -> Result<BoundTerms> {
    inputs.validate()?;
    let schedule = StepsizeSchedule::Linear { alpha, h };
    schedule.validate()?;
    let mix = |d: f64| inputs.mixing.time(d);
    let k_first = first_valid_iteration(&schedule, &mix, 0)?;
    if k < k_first {
        return Err(Error::arg(format!("bound holds for k >= K = {k_first}, got k = {k}")));
    }
    check_diminishing(&schedule, &mix, 0, inputs.budget(), k_first, k)?;
    let t_k = mix(schedule.at(k));
    Ok(sa_linear_terms(&inputs.phi, inputs.c1, inputs.c2, alpha, h, k_first, t_k, k))
}

/// `h >= [2 xi / (phi2 alpha)]^(1 / (1 - xi))`.
pub fn polynomial_h_threshold(phi2: f64, alpha: f64, xi: f64) -> f64 {
    (2.0 * xi / (phi2 * alpha)).powf(1.0 / (1.0 - xi))
}

#[allow(clippy::too_many_arguments)]
pub fn sa_polynomial_terms(phi: &PhiConstants, c1: f64, c2: f64, alpha: f64, h: f64, xi: f64, k_first: usize, t_k: usize, k: usize) -> BoundTerms {
    let (kh, k0h) = (k as f64 + h, k_first as f64 + h);
    let expo = -phi.phi2 * alpha / (1.0 - xi) * (kh.powf(1.0 - xi) - k0h.powf(1.0 - xi));
    BoundTerms::new(phi.phi1 * c1 * expo.exp(), 4.0 * phi.phi3 * c2 * alpha / phi.phi2 * t_k as f64 / kh.powf(xi))
}

pub fn bound_sa_polynomial(inputs: &BoundInputs, alpha: f64, h: f64, xi: f64, k: usize) -> Result<BoundTerms> {
    inputs.validate()?;
    let schedule = StepsizeSchedule::Polynomial { alpha, h, xi };
    schedule.validate()?;
    let h_min = polynomial_h_threshold(inputs.phi.phi2, alpha, xi);
    if h < h_min {
        return Err(Error::assumption(Assumption::StepsizeBudget, format!("h = {h} is below the threshold {h_min:.4e}")));
    }
    let mix = |d: f64| inputs.mixing.time(d);
    let k_first = first_valid_iteration(&schedule, &mix, 0)?;
    if k < k_first {
        return Err(Error::arg(format!("bound holds for k >= K = {k_first}, got k = {k}")));
    }
    check_diminishing(&schedule, &mix, 0, inputs.budget(), k_first, k)?;
    let t_k = mix(schedule.at(k));
    Ok(sa_polynomial_terms(&inputs.phi, inputs.c1, inputs.c2, alpha, h, xi, k_first, t_k, k))
}

/// CSV `k,bias,variance,total`.
pub fn write_bound_csv<W: Write>(mut w: W, ks: &[usize], terms: &[BoundTerms]) -> std::io::Result<()> {
    writeln!(w, "k,bias,variance,total")?;
    for (k, t) in ks.iter().zip(terms) {
        writeln!(w, "{k},{:e},{:e},{:e}", t.bias, t.variance, t.total)?;
    }
    Ok(())
}
