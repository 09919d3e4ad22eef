use super::samplers::NoiseSampler;
use super::stepsize::StepsizeSchedule;
use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::operators::AsyncOperator;
use crate::rng::{child_rng, SaRng};
use rand::Rng;
use std::io::Write;

const OVERFLOW: f64 = 1e12;

/// Additive martingale-difference noise `w_k`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MartingaleNoise {
    #[default]
    None,
    /// Independent fair signs per coordinate, scaled so that
    /// `||w_k||_c = A2 ||x_k||_c + B2` exactly.
    BoundedSymmetric { a2: f64, b2: f64 },
}

impl MartingaleNoise {
    pub fn a2(&self) -> f64 {
        match *self {
            MartingaleNoise::None => 0.0,
            MartingaleNoise::BoundedSymmetric { a2, .. } => a2,
        }
    }

    pub fn b2(&self) -> f64 {
        match *self {
            MartingaleNoise::None => 0.0,
            MartingaleNoise::BoundedSymmetric { b2, .. } => b2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.a2() < 0.0 || self.b2() < 0.0 || !self.a2().is_finite() || !self.b2().is_finite() {
            return Err(Error::arg("noise constants must be nonnegative and finite"));
        }
        Ok(())
    }

    fn sample(&self, x: &[f64], norm: Norm, rng: &mut SaRng, out: &mut [f64]) {
        if let MartingaleNoise::BoundedSymmetric { a2, b2 } = *self {
            let d = x.len() as f64;
            let scale = (a2 * norm.of(x) + b2)
                / match norm {
                    Norm::LInf => 1.0,
                    Norm::L2 => d.sqrt(),
                    Norm::L1 => d,
                };
            for w in out.iter_mut() {
                *w = if rng.random::<bool>() { scale } else { -scale };
            }
        }
    }
}

/// Combined constants `A = A1 + A2 + 1` and `B = B1 + B2`.
pub fn combined_constants<O: AsyncOperator>(op: &O, noise: &MartingaleNoise) -> (f64, f64) {
    (op.lipschitz() + noise.a2() + 1.0, op.zero_bound() + noise.b2())
}

#[derive(Debug, Clone)]
pub struct SaRunLog<Y> {
    pub checkpoints: Vec<usize>,
    pub iterates: Vec<Vec<f64>>,
    /// `Y_k` at each checkpoint `k < horizon`.
    pub samples: Vec<Y>,
    pub schedule: StepsizeSchedule,
    pub norm: Norm,
    pub horizon: usize,
    pub seed: u64,
}

impl<Y> SaRunLog<Y> {
    pub fn iterate_at(&self, k: usize) -> Option<&[f64]> {
        self.checkpoints.binary_search(&k).ok().map(|i| self.iterates[i].as_slice())
    }

    /// Long format `k,coord_index,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_iterates_csv(&mut w, &self.checkpoints, &self.iterates)
    }
}

pub fn write_iterates_csv<W: Write>(w: &mut W, ks: &[usize], xs: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(w, "k,coord_index,value")?;
    for (k, x) in ks.iter().zip(xs) {
        for (i, v) in x.iter().enumerate() {
            writeln!(w, "{k},{i},{v:e}")?;
        }
    }
    Ok(())
}

/// `{0, 1, 2, 4, 8, ...} ∪ {horizon}`.
pub fn geometric_checkpoints(horizon: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut k = 1;
    while k < horizon {
        out.push(k);
        k *= 2;
    }
    if horizon > 0 {
        out.push(horizon);
    }
    out
}

/// `count + 1` evenly spaced checkpoints including 0 and `horizon`.
pub fn linear_checkpoints(horizon: usize, count: usize) -> Vec<usize> {
    let count = count.max(1);
    let mut out: Vec<usize> = (0..=count).map(|i| (horizon as u128 * i as u128 / count as u128) as usize).collect();
    out.dedup();
    out
}

pub fn validate_checkpoints(ks: &[usize], horizon: usize) -> Result<()> {
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("checkpoints must be strictly increasing"));
    }
    if ks.last().is_some_and(|k| *k > horizon) {
        return Err(Error::arg("checkpoint beyond horizon"));
    }
    Ok(())
}

/// Runs the recursion for `horizon` steps, recording `x_k` at the given
/// checkpoints. `seed` drives only the martingale noise; the sampler
/// carries its own stream.
#[allow(clippy::too_many_arguments)]
pub fn run_sa<O, S>(
    op: &O,
    sampler: &mut S,
    schedule: &StepsizeSchedule,
    noise: &MartingaleNoise,
    x0: &[f64],
    horizon: usize,
    checkpoints: &[usize],
    seed: u64,
) -> Result<SaRunLog<O::Sample>>
where
    O: AsyncOperator,
    S: NoiseSampler<O::Sample>,
{
    schedule.validate()?;
    noise.validate()?;
    validate_checkpoints(checkpoints, horizon)?;
    let d = op.dim();
    if x0.len() != d {
        return Err(Error::dim(format!("x0 has length {}, operator dimension is {d}", x0.len())));
    }
    let norm = op.norm();
    let mut rng = child_rng(seed, "martingale", 0);
    let mut x = x0.to_vec();
    let mut delta = vec![0.0; d];
    let mut w = vec![0.0; d];
    let noisy = !matches!(noise, MartingaleNoise::None);
    let mut log = SaRunLog {
        checkpoints: checkpoints.to_vec(),
        iterates: Vec::with_capacity(checkpoints.len()),
        samples: Vec::new(),
        schedule: *schedule,
        norm,
        horizon,
        seed,
    };
    let mut next_cp = 0;
    for k in 0..horizon {
        let record = next_cp < checkpoints.len() && checkpoints[next_cp] == k;
        if record {
            log.iterates.push(x.clone());
            next_cp += 1;
        }
        let y = sampler.next_sample();
        if record {
            log.samples.push(y.clone());
        }
        op.apply_delta(&x, y, &mut delta);
        let alpha = schedule.at(k);
        if noisy {
            noise.sample(&x, norm, &mut rng, &mut w);
            for i in 0..d {
                x[i] += alpha * (delta[i] + w[i]);
            }
        } else {
            for i in 0..d {
                x[i] += alpha * delta[i];
            }
        }
        let sup = Norm::LInf.of(&x);
        if !(sup <= OVERFLOW) {
            return Err(Error::Overflow { iteration: k + 1, norm: sup });
        }
    }
    if next_cp < checkpoints.len() {
        log.iterates.push(x);
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftCheck {
    Holds,
    Violated { k: usize, lhs: f64, rhs: f64 },
    /// `alpha_{k1, k2-1} > 1/(4A)`: the inequalities are not claimed.
    Inapplicable,
}

/// Verifies, for every recorded `k` in `[k1, k2]`,
/// `||x_k - x_{k1}|| <= 2 alpha_{k1,k2-1} (A ||x_{k1}|| + B)` and
/// `||x_k - x_{k1}|| <= 4 alpha_{k1,k2-1} (A ||x_{k2}|| + B)`.
pub fn iterate_drift_check<Y>(log: &SaRunLog<Y>, a: f64, b: f64, k1: usize, k2: usize) -> Result<DriftCheck> {
    if k2 <= k1 {
        return Err(Error::arg("need k1 < k2"));
    }
    let x1 = log.iterate_at(k1).ok_or_else(|| Error::arg(format!("iterate {k1} not recorded")))?;
    let x2 = log.iterate_at(k2).ok_or_else(|| Error::arg(format!("iterate {k2} not recorded")))?;
    let s = log.schedule.partial_sum(k1, k2 - 1);
    if s > 1.0 / (4.0 * a) {
        return Ok(DriftCheck::Inapplicable);
    }
    let n = log.norm;
    let r1 = 2.0 * s * (a * n.of(x1) + b);
    let r2 = 4.0 * s * (a * n.of(x2) + b);
    for (k, x) in log.checkpoints.iter().zip(&log.iterates) {
        if *k < k1 || *k > k2 {
            continue;
        }
        let lhs = n.dist(x, x1);
        let rhs = r1.min(r2);
        if lhs > rhs * (1.0 + 1e-12) {
            return Ok(DriftCheck::Violated { k: *k, lhs, rhs });
        }
    }
    Ok(DriftCheck::Holds)
}
