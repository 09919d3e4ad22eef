//! Generalized Moreau envelope
//! `M(x) = min_u { 1/2 ||u||_c^2 + 1/(2 theta) ||x - u||_p^2 }`
//! for `||.||_c` in {l2, linf}, and the constants `phi1..phi3` it induces.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSpec {
    pub contraction_norm: Norm,
    pub theta: f64,
    /// Exponent of the smoothing norm `||.||_s = ||.||_p`.
    pub p: f64,
    pub dim: usize,
}

/// `l_cs ||x||_s <= ||x||_c <= u_cs ||x||_s`, smoothness `L` of
/// `1/2 ||.||_s^2`, and the envelope sandwich constants
/// `l_cm = sqrt(1 + theta l_cs^2)`, `u_cm = sqrt(1 + theta u_cs^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConstants {
    pub l_cs: f64,
    pub u_cs: f64,
    pub smoothness: f64,
    pub l_cm: f64,
    pub u_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiConstants {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl EnvelopeSpec {
    pub fn new(contraction_norm: Norm, theta: f64, p: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("envelope dimension must be positive"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::arg(format!("theta must be positive and finite, got {theta}")));
        }
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::arg(format!("smoothing exponent p must be finite and at least 2, got {p}")));
        }
        match contraction_norm {
            Norm::L2 if p != 2.0 => Err(Error::arg("the l2 envelope uses p = 2")),
            Norm::L1 => Err(Error::arg("envelopes are provided for l2 and linf contraction only")),
            _ => Ok(EnvelopeSpec { contraction_norm, theta, p, dim }),
        }
    }

    /// `theta = 1, p = 2` for l2; for linf, `p = max(2, 2 ln d)` and
    /// `theta = ((1 + beta) / (2 beta))^2 - 1`.
    pub fn preset(contraction_norm: Norm, beta: f64, dim: usize) -> Result<Self> {
        check_beta(beta)?;
        match contraction_norm {
            Norm::L2 => EnvelopeSpec::new(Norm::L2, 1.0, 2.0, dim),
            Norm::LInf => {
                let p = (2.0 * (dim.max(1) as f64).ln()).max(2.0);
                let theta = ((1.0 + beta) / (2.0 * beta)).powi(2) - 1.0;
                EnvelopeSpec::new(Norm::LInf, theta, p, dim)
            }
            Norm::L1 => Err(Error::arg("envelopes are provided for l2 and linf contraction only")),
        }
    }

    pub fn constants(&self) -> NormConstants {
        let (l_cs, u_cs, smoothness) = match self.contraction_norm {
            Norm::LInf => ((self.dim as f64).powf(-1.0 / self.p), 1.0, self.p - 1.0),
            _ => (1.0, 1.0, 1.0),
        };
        NormConstants {
            l_cs,
            u_cs,
            smoothness,
            l_cm: (1.0 + self.theta * l_cs * l_cs).sqrt(),
            u_cm: (1.0 + self.theta * u_cs * u_cs).sqrt(),
        }
    }

    /// `beta^2 < (1 + theta l_cs^2) / (1 + theta u_cs^2)`.
    pub fn admissible_for(&self, beta: f64) -> bool {
        let c = self.constants();
        beta * beta < (1.0 + self.theta * c.l_cs * c.l_cs) / (1.0 + self.theta * c.u_cs * c.u_cs)
    }

    pub fn phi_constants(&self, beta: f64) -> Result<PhiConstants> {
        check_beta(beta)?;
        if !self.admissible_for(beta) {
            return Err(Error::arg(format!("theta = {} is not admissible for beta = {beta}", self.theta)));
        }
        let c = self.constants();
        let (lo, hi) = (1.0 + self.theta * c.l_cs * c.l_cs, 1.0 + self.theta * c.u_cs * c.u_cs);
        let phi1 = hi / lo;
        let phi2 = 1.0 - beta * phi1.sqrt();
        let phi3 = 114.0 * c.smoothness * hi / (self.theta * c.l_cs * c.l_cs);
        Ok(PhiConstants { phi1, phi2, phi3 })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dim(format!("expected length {}, got {}", self.dim, x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("envelope argument must be finite"));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("contraction factor must lie in (0, 1), got {beta}")))
    }
}

/// Preset constants for a `beta`-contraction in `norm` on `R^d`, with the
/// standard envelopes checked: for l2, `phi1 <= 1`, `phi2 >= 1 - beta`,
/// `phi3 <= 228`; for linf and `d >= 2`, `phi1 <= 3`, `phi2 >= (1 - beta)/2`,
/// `phi3 <= 456 e ln(d) / (1 - beta)`.
pub fn phi_constants(norm: Norm, beta: f64, dim: usize) -> Result<PhiConstants> {
    let spec = EnvelopeSpec::preset(norm, beta, dim)?;
    let phi = spec.phi_constants(beta)?;
    let tol = 1e-12;
    let ok = match norm {
        Norm::L2 => phi.phi1 <= 1.0 + tol && phi.phi2 >= 1.0 - beta - tol && phi.phi3 <= 228.0 * (1.0 + tol),
        _ if dim < 2 => true,
        _ => {
            let cap = 456.0 * std::f64::consts::E * (dim as f64).ln() / (1.0 - beta);
            phi.phi1 <= 3.0 + tol && phi.phi2 >= (1.0 - beta) / 2.0 - tol && phi.phi3 <= cap * (1.0 + tol)
        }
    };
    if !ok {
        return Err(Error::NotConverged(format!("preset constants {phi:?} miss their envelopes")));
    }
    Ok(phi)
}

/// Minimizer of the inner problem.
///
/// For linf the optimal `u` for a fixed radius `m = ||u||_inf` is the clip
/// of `x` to `[-m, m]`, which leaves a convex problem in `m` alone:
/// `f(m) = m^2/2 + ||(|x| - m)_+||_p^2 / (2 theta)`. Its derivative is
/// monotone, so bisection finds the root to machine precision.
fn minimizer(spec: &EnvelopeSpec, x: &[f64]) -> Vec<f64> {
    match spec.contraction_norm {
        Norm::LInf => {
            let top = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if top == 0.0 {
                return vec![0.0; x.len()];
            }
            let slope = |m: f64| m - residual_pull(x, m, spec.p) / spec.theta;
            let (mut lo, mut hi) = (0.0, top);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if slope(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let m = 0.5 * (lo + hi);
            x.iter().map(|v| v.clamp(-m, m)).collect()
        }
        _ => x.iter().map(|v| v / (1.0 + spec.theta)).collect(),
    }
}

/// `||z||_p^{2-p} sum z_i^{p-1}` for `z = (|x| - m)_+`, computed with `z`
/// rescaled by its maximum to stay clear of overflow.
fn residual_pull(x: &[f64], m: f64, p: f64) -> f64 {
    let zmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs() - m));
    if zmax <= 0.0 {
        return 0.0;
    }
    let (mut sp, mut sp1) = (0.0, 0.0);
    for v in x {
        let z = (v.abs() - m).max(0.0) / zmax;
        if z > 0.0 {
            sp += z.powf(p);
            sp1 += z.powf(p - 1.0);
        }
    }
    zmax * sp.powf(2.0 / p - 1.0) * sp1
}

fn lp_norm(z: &[f64], p: f64) -> f64 {
    let zmax = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if zmax == 0.0 {
        return 0.0;
    }
    zmax * z.iter().map(|v| (v.abs() / zmax).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `grad (1/2 ||z||_p^2) = ||z||_p^{2-p} sign(z) |z|^{p-1}`.
fn half_sq_lp_gradient(z: &[f64], p: f64) -> Vec<f64> {
    let n = lp_norm(z, p);
    if n == 0.0 {
        return vec![0.0; z.len()];
    }
    z.iter().map(|v| n * (v.abs() / n).powf(p - 1.0) * v.signum()).collect()
}

pub fn envelope_value(spec: &EnvelopeSpec, x: &[f64]) -> Result<f64> {
    spec.check_point(x)?;
    match spec.contraction_norm {
        Norm::LInf => {
            let u = minimizer(spec, x);
            let r: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - b).collect();
            let c = Norm::LInf.of(&u);
            let s = lp_norm(&r, spec.p);
            Ok(0.5 * c * c + s * s / (2.0 * spec.theta))
        }
        _ => Ok(x.iter().map(|v| v * v).sum::<f64>() / (2.0 * (1.0 + spec.theta))),
    }
}

/// `grad M(x) = (1/theta) grad g(x - u*)` with `g = 1/2 ||.||_p^2`.
pub fn envelope_gradient(spec: &EnvelopeSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_point(x)?;
    let u = minimizer(spec, x);
    let r: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - b).collect();
    Ok(half_sq_lp_gradient(&r, spec.p).into_iter().map(|g| g / spec.theta).collect())
}

/// Smallest slack of
/// `M(x) + <grad M(x), y - x> + L/(2 theta) ||y - x||_p^2 - M(y)`
/// over random Gaussian pairs.
pub fn smoothness_certificate(spec: &EnvelopeSpec, num_pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let consts = spec.constants();
    let mut worst = f64::INFINITY;
    for _ in 0..num_pairs {
        let x: Vec<f64> = (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        worst = worst.min(smoothness_slack(spec, consts.smoothness, &x, &y)?);
    }
    Ok(worst)
}

pub fn smoothness_slack(spec: &EnvelopeSpec, smoothness: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    let mx = envelope_value(spec, x)?;
    let my = envelope_value(spec, y)?;
    let g = envelope_gradient(spec, x)?;
    let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let inner: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
    let dn = lp_norm(&d, spec.p);
    Ok(mx + inner + smoothness / (2.0 * spec.theta) * dn * dn - my)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_closed_form() {
        let spec = EnvelopeSpec::preset(Norm::L2, 0.5, 2).unwrap();
        assert_eq!(envelope_value(&spec, &[3.0, 4.0]).unwrap(), 6.25);
        assert_eq!(envelope_gradient(&spec, &[3.0, 4.0]).unwrap(), vec![1.5, 2.0]);
    }

    #[test]
    fn linf_matches_brute_force_in_one_dimension() {
        // d = 1: M(x) = min_u u^2/2 + (x-u)^2/(2 theta) = x^2 / (2 (1 + theta))
        let spec = EnvelopeSpec::new(Norm::LInf, 3.0, 2.0, 1).unwrap();
        let m = envelope_value(&spec, &[2.0]).unwrap();
        assert!((m - 4.0 / 8.0).abs() < 1e-14);
    }

    #[test]
    fn linf_gradient_matches_finite_differences() {
        let spec = EnvelopeSpec::preset(Norm::LInf, 0.8, 6).unwrap();
        let x = [0.3, -1.2, 0.9, 2.0, -0.1, 1.7];
        let g = envelope_gradient(&spec, &x).unwrap();
        for i in 0..x.len() {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (envelope_value(&spec, &xp).unwrap() - envelope_value(&spec, &xm).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn preset_phi_values() {
        let phi = phi_constants(Norm::L2, 0.5, 3).unwrap();
        assert_eq!((phi.phi1, phi.phi2, phi.phi3), (1.0, 0.5, 228.0));
        for &b in &[0.01, 0.3, 0.9, 0.99] {
            for &d in &[1, 2, 3, 10, 1000] {
                let phi = phi_constants(Norm::LInf, b, d).unwrap();
                assert!(phi.phi2 > 0.0 && phi.phi2 < 1.0);
            }
        }
    }
}
