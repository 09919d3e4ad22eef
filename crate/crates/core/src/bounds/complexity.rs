use crate::error::{Error, Result};
use crate::operators::vtrace_eta;

/// An order-of-magnitude expression evaluated with unit constants. It
/// predicts how the sample count scales, not the count itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingLaw {
    pub value: f64,
    /// Set when `gamma c_bar > 1`, where the trace factor grows
    /// geometrically in `n`.
    pub geometric_trace_growth: bool,
}

impl ScalingLaw {
    pub const LABEL: &'static str = "scaling law";
}

fn check(epsilon: f64, gamma: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::arg(format!("accuracy must be positive, got {epsilon}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::arg(format!("discount factor must lie in (0, 1), got {gamma}")));
    }
    Ok((1.0 / epsilon).ln().powi(2) / (epsilon * epsilon))
}

/// `log^2(1/eps) / (eps^2 (1-gamma)^5 N_min^3)`.
pub fn sample_complexity_q(epsilon: f64, gamma: f64, n_min: f64) -> Result<ScalingLaw> {
    let acc = check(epsilon, gamma)?;
    if !(n_min > 0.0 && n_min <= 1.0) {
        return Err(Error::arg("N_min must lie in (0, 1]"));
    }
    Ok(ScalingLaw { value: acc / ((1.0 - gamma).powi(5) * n_min.powi(3)), geometric_trace_growth: false })
}

/// `log^2(1/eps)/eps^2 * (1-gamma)^-5 * n rho^2 eta^2 (1 - gamma C)^3 / (1 - (gamma C)^n)^3 * K_min^-3`.
pub fn sample_complexity_vtrace(epsilon: f64, gamma: f64, n: usize, c_bar: f64, rho_bar: f64, c_min: f64, k_min: f64) -> Result<ScalingLaw> {
    let acc = check(epsilon, gamma)?;
    if n == 0 || !(c_bar > 0.0 && rho_bar > 0.0) {
        return Err(Error::arg("need n >= 1 and positive truncation levels"));
    }
    if !(c_min > 0.0 && gamma * c_min < 1.0 && k_min > 0.0) {
        return Err(Error::arg("need C_min > 0 with gamma C_min < 1, and K_min > 0"));
    }
    let eta = vtrace_eta(gamma, c_bar, n);
    let gc = gamma * c_min;
    let trace = n as f64 * rho_bar * rho_bar * eta * eta * (1.0 - gc).powi(3) / (1.0 - gc.powi(n as i32)).powi(3);
    Ok(ScalingLaw { value: acc / (1.0 - gamma).powi(5) * trace / k_min.powi(3), geometric_trace_growth: gamma * c_bar > 1.0 })
}

/// `log^2(1/eps)/eps^2 * (1-gamma)^-2 * n / (1-gamma^n)^2 * K_min^-2 * sqrt(|S|)`.
pub fn sample_complexity_nstep(epsilon: f64, gamma: f64, n: usize, k_min: f64, num_states: usize) -> Result<ScalingLaw> {
    let acc = check(epsilon, gamma)?;
    if n == 0 || !(k_min > 0.0) || num_states == 0 {
        return Err(Error::arg("need n >= 1, K_min > 0 and at least one state"));
    }
    let f = n as f64 / (1.0 - gamma.powi(n as i32)).powi(2);
    Ok(ScalingLaw {
        value: acc / (1.0 - gamma).powi(2) * f / (k_min * k_min) * (num_states as f64).sqrt(),
        geometric_trace_growth: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalN {
    /// Brute-force minimiser of `n / (1 - gamma^n)^2` over `1..=500`.
    pub argmin: usize,
    /// Closed-form estimate `max(1, round(1 / ln(1/gamma)))`.
    pub estimate: usize,
}

pub fn optimal_n(gamma: f64) -> Result<OptimalN> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::arg(format!("discount factor must lie in (0, 1), got {gamma}")));
    }
    let f = |n: usize| n as f64 / (1.0 - gamma.powi(n as i32)).powi(2);
    let mut argmin = 1;
    for n in 2..=500 {
        if f(n) < f(argmin) {
            argmin = n;
        }
    }
    let estimate = (1.0 / (1.0 / gamma).ln()).round().max(1.0) as usize;
    Ok(OptimalN { argmin, estimate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_n_values() {
        assert_eq!(optimal_n(0.9).unwrap(), OptimalN { argmin: 12, estimate: 9 });
        assert_eq!(optimal_n(0.3).unwrap().argmin, 1);
    }
}
