use crate::error::{Error, Result};

/// `alpha_k = alpha`, `alpha / (k + h)` or `alpha / (k + h)^xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeSchedule {
    Constant { alpha: f64 },
    Linear { alpha: f64, h: f64 },
    Polynomial { alpha: f64, h: f64, xi: f64 },
}

impl StepsizeSchedule {
    /// `alpha = 0` is allowed and freezes the iterate.
    pub fn validate(&self) -> Result<()> {
        let ok_alpha = |a: f64| a >= 0.0 && a.is_finite();
        match *self {
            StepsizeSchedule::Constant { alpha } if ok_alpha(alpha) => Ok(()),
            StepsizeSchedule::Linear { alpha, h } if ok_alpha(alpha) && h > 0.0 && h.is_finite() => Ok(()),
            StepsizeSchedule::Polynomial { alpha, h, xi } if ok_alpha(alpha) && h > 0.0 && h.is_finite() && xi > 0.0 && xi < 1.0 => {
                Ok(())
            }
            s => Err(Error::arg(format!("invalid stepsize schedule {s:?}"))),
        }
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            StepsizeSchedule::Constant { alpha } => alpha,
            StepsizeSchedule::Linear { alpha, h } => alpha / (k as f64 + h),
            StepsizeSchedule::Polynomial { alpha, h, xi } => alpha / (k as f64 + h).powf(xi),
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            StepsizeSchedule::Constant { alpha } | StepsizeSchedule::Linear { alpha, .. } | StepsizeSchedule::Polynomial { alpha, .. } => alpha,
        }
    }

    /// `sum_{i=k1}^{k2} alpha_i`, zero when `k2 < k1`.
    pub fn partial_sum(&self, k1: usize, k2: usize) -> f64 {
        if k2 < k1 {
            return 0.0;
        }
        match *self {
            StepsizeSchedule::Constant { alpha } => alpha * (k2 - k1 + 1) as f64,
            _ => (k1..=k2).map(|i| self.at(i)).sum(),
        }
    }
}

/// Drift budget `min(phi2 / (phi3 A^2), 1 / (4A))`.
pub fn stepsize_budget(a: f64, phi2: f64, phi3: f64) -> f64 {
    (phi2 / (phi3 * a * a)).min(1.0 / (4.0 * a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepsizeCheck {
    pub satisfied: bool,
    pub first_violation: Option<usize>,
}

/// Checks `alpha_{k - t_k, k - 1} <= min(phi2 / (phi3 A^2), 1 / (4A))` for
/// every `k <= horizon` with `k >= t_k`, where `t_k = mixing(alpha_k)`.
pub fn check_stepsize_condition(
    schedule: &StepsizeSchedule,
    a: f64,
    phi2: f64,
    phi3: f64,
    mixing: &dyn Fn(f64) -> usize,
    horizon: usize,
) -> Result<StepsizeCheck> {
    schedule.validate()?;
    if !(a > 0.0 && phi2 > 0.0 && phi3 > 0.0) {
        return Err(Error::arg("A, phi2 and phi3 must be positive"));
    }
    let budget = stepsize_budget(a, phi2, phi3);
    if let StepsizeSchedule::Constant { alpha } = *schedule {
        let t = mixing(alpha);
        let ok = t > horizon || alpha * t as f64 <= budget;
        return Ok(StepsizeCheck { satisfied: ok, first_violation: if ok { None } else { Some(t) } });
    }
    for k in 0..=horizon {
        let t = mixing(schedule.at(k));
        if k < t || t == 0 {
            continue;
        }
        if schedule.partial_sum(k - t, k - 1) > budget {
            return Ok(StepsizeCheck { satisfied: false, first_violation: Some(k) });
        }
    }
    Ok(StepsizeCheck { satisfied: true, first_violation: None })
}

/// Largest `alpha < 1` with `alpha * window(alpha) <= budget`, where
/// `window` is non-increasing in `alpha` (mixing time plus any lookahead).
///
/// `alpha * window(alpha)` is piecewise linear with downward jumps, so the
/// supremum is `budget / m` for the smallest integer `m` with
/// `window(budget / m) <= m`.
pub fn max_admissible_stepsize(budget: f64, window: &dyn Fn(f64) -> usize) -> Result<f64> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::arg("stepsize budget must be positive and finite"));
    }
    let mut m = 1usize;
    if budget >= 1.0 {
        m = budget.floor() as usize + 1;
    }
    while m < 1usize << 40 {
        let mut alpha = budget / m as f64;
        // rounding can leave alpha * m one ulp above the budget
        while alpha * m as f64 > budget {
            alpha = alpha.next_down();
        }
        let w = window(alpha).max(1);
        if w <= m {
            return Ok(alpha);
        }
        // every m' < w is infeasible too, since window only grows as alpha shrinks
        m = w;
    }
    Err(Error::NotConverged("no admissible constant stepsize found".into()))
}

/// Largest constant stepsize meeting the drift budget with the analytic
/// mixing-time bound `t_alpha = ceil((log(1/alpha) + log(C/sigma)) / log(1/sigma))`.
pub fn max_constant_stepsize(a: f64, phi2: f64, phi3: f64, c: f64, sigma: f64) -> Result<f64> {
    if !(a > 0.0 && phi2 > 0.0 && phi3 > 0.0 && c > 0.0 && sigma > 0.0 && sigma < 1.0) {
        return Err(Error::arg("need A, phi2, phi3, C > 0 and sigma in (0, 1)"));
    }
    let budget = stepsize_budget(a, phi2, phi3);
    max_admissible_stepsize(budget, &|alpha| analytic_mixing_time(alpha, c, sigma))
}

pub fn analytic_mixing_time(delta: f64, c: f64, sigma: f64) -> usize {
    let t = ((1.0 / delta).ln() + (c / sigma).ln()) / (1.0 / sigma).ln();
    if t <= 0.0 {
        0
    } else {
        t.ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_value() {
        let s = StepsizeSchedule::Polynomial { alpha: 2.0, h: 2.0, xi: 0.5 };
        assert_eq!(s.at(2), 1.0);
    }

    #[test]
    fn max_constant_stepsize_is_tight() {
        for &(a, phi2, phi3, c, sigma) in &[(3.0, 0.1, 2000.0, 1.5, 0.6), (1.0, 0.5, 228.0, 1.0, 0.5), (2.0, 0.2, 50.0, 3.0, 0.9)] {
            let alpha = max_constant_stepsize(a, phi2, phi3, c, sigma).unwrap();
            let budget = stepsize_budget(a, phi2, phi3);
            let f = |x: f64| x * analytic_mixing_time(x, c, sigma).max(1) as f64;
            assert!(alpha < 1.0);
            assert!(f(alpha) <= budget);
            assert!(f(1.01 * alpha) > budget);
            let halved = max_constant_stepsize(a, phi2, 2.0 * phi3, c, sigma).unwrap();
            assert!(halved <= alpha);
        }
    }

    #[test]
    fn boundary_is_inclusive() {
        let s = StepsizeSchedule::Constant { alpha: 0.125 };
        let check = check_stepsize_condition(&s, 1.0, 1.0, 1.0, &|_| 2, 100).unwrap();
        assert!(check.satisfied);
        let s = StepsizeSchedule::Constant { alpha: 1.0 };
        let check = check_stepsize_condition(&s, 10.0, 1.0, 1.0, &|_| 1, 100).unwrap();
        assert_eq!(check.first_violation, Some(1));
    }

    #[test]
    fn diminishing_check_finds_first_violation() {
        let s = StepsizeSchedule::Linear { alpha: 1.0, h: 1.0 };
        let check = check_stepsize_condition(&s, 1.0, 1.0, 1.0, &|_| 1, 100).unwrap();
        // budget 1/4: alpha_{k-1} = 1/k <= 1/4 fails first at k = 1
        assert_eq!(check.first_violation, Some(1));
        let s = StepsizeSchedule::Linear { alpha: 1.0, h: 10.0 };
        assert!(check_stepsize_condition(&s, 1.0, 1.0, 1.0, &|_| 2, 1000).unwrap().satisfied);
    }
}
