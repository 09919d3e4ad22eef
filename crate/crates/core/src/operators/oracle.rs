use super::AsyncOperator;
use crate::chain::{stationary_distribution, FiniteChain, DEFAULT_MAX_LIFTED_STATES};
use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::par::{map_indexed, Execution, Moments};
use crate::rng::child_rng;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct OracleEstimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub num_samples: usize,
}

const CHUNK: usize = 1 << 16;

/// Monte-Carlo estimate of `F̄(x)` from i.i.d. exact draws of the lifted
/// chain's stationary law (inverse CDF over the enumerated states).
pub fn empirical_expected<O: AsyncOperator>(op: &O, x: &[f64], num_samples: usize, seed: u64) -> Result<OracleEstimate> {
    let chain = op.noise_chain(DEFAULT_MAX_LIFTED_STATES)?;
    let mu = stationary_distribution(&chain)?;
    empirical_expected_on(op, &chain, &mu, x, num_samples, seed, Execution::from_env())
}

pub fn empirical_expected_on<O: AsyncOperator>(
    op: &O,
    chain: &FiniteChain<O::Sample>,
    mu: &[f64],
    x: &[f64],
    num_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<OracleEstimate> {
    if num_samples == 0 {
        return Err(Error::arg("num_samples must be positive"));
    }
    super::check_dim(x, op.dim())?;
    let mut cdf = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for m in mu {
        acc += m;
        cdf.push(acc);
    }
    let total = acc;
    let chunks = num_samples.div_ceil(CHUNK);
    let parts = map_indexed(chunks, exec, |c| {
        let mut rng = child_rng(seed, "oracle", c as u64);
        let count = CHUNK.min(num_samples - c * CHUNK);
        let mut m = Moments::new(x.len());
        let mut delta = vec![0.0; x.len()];
        let mut f = vec![0.0; x.len()];
        for _ in 0..count {
            let u = rng.random::<f64>() * total;
            let idx = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
            op.apply_delta(x, &chain.labels[idx], &mut delta);
            for i in 0..x.len() {
                f[i] = x[i] + delta[i];
            }
            m.push(&f);
        }
        m
    });
    let mut all = Moments::new(x.len());
    for p in &parts {
        all.merge(p);
    }
    let stderr = if num_samples > 1 { all.stderr() } else { vec![0.0; x.len()] };
    Ok(OracleEstimate { mean: all.mean, stderr, num_samples })
}

#[derive(Debug, Clone, Copy)]
pub struct InterpolationCheck {
    /// Lower estimate of `||G||_p`.
    pub norm_p: f64,
    pub norm_1: f64,
    pub norm_inf: f64,
    pub bound: f64,
    pub holds: bool,
}

fn lp(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        x.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    } else {
        x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Checks `||G||_p <= ||G||_1^(1/p) ||G||_inf^(1-1/p)` for a nonnegative
/// matrix, estimating `||G||_p` from below by random search over nonnegative
/// directions, refined by power iteration when `p = 2`.
pub fn matrix_norm_interpolation_check(g: &DMatrix<f64>, p: f64, seed: u64) -> Result<InterpolationCheck> {
    if !(p >= 1.0) {
        return Err(Error::arg("p must be at least 1"));
    }
    if g.iter().any(|x| *x < -1e-14) {
        return Err(Error::arg("matrix has negative entries"));
    }
    let g = g.map(|x| x.max(0.0));
    let (r, c) = (g.nrows(), g.ncols());
    let norm_inf = (0..r).map(|i| g.row(i).sum()).fold(0.0, f64::max);
    let norm_1 = (0..c).map(|j| g.column(j).sum()).fold(0.0, f64::max);
    let mut rng = child_rng(seed, "interpolation", 0);
    let mut best = 0.0f64;
    let mut gx = vec![0.0; r];
    let ratio = |x: &[f64], gx: &mut Vec<f64>| {
        for i in 0..r {
            gx[i] = (0..c).map(|j| g[(i, j)] * x[j]).sum();
        }
        lp(gx, p) / lp(x, p)
    };
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
        best = best.max(ratio(&x, &mut gx));
    }
    if p == 2.0 {
        let gtg = g.transpose() * &g;
        let mut v = nalgebra::DVector::from_element(c, 1.0);
        for _ in 0..1000 {
            let w = &gtg * &v;
            let n = w.norm();
            if n == 0.0 {
                break;
            }
            v = w / n;
        }
        best = best.max(ratio(v.as_slice(), &mut gx));
    }
    let bound = if p.is_infinite() { norm_inf } else { norm_1.powf(1.0 / p) * norm_inf.powf(1.0 - 1.0 / p) };
    Ok(InterpolationCheck { norm_p: best, norm_1, norm_inf, bound, holds: best <= bound * (1.0 + 1e-12) })
}

/// Largest observed `||Fbar(x) - Fbar(y)|| / ||x - y||` in `norm` over
/// `num_pairs` random pairs. Half the pairs are dense Gaussian, half differ
/// in a single coordinate, which is where asynchronous operators are
/// closest to their contraction factor.
pub fn contraction_ratio<O: AsyncOperator>(op: &O, norm: Norm, num_pairs: usize, seed: u64) -> f64 {
    let d = op.dim();
    let mut rng = child_rng(seed, "contraction", 0);
    let mut worst = 0.0f64;
    for i in 0..num_pairs {
        let scale = 10f64.powf(rng.random_range(-1.0..2.0));
        let x: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = if i % 2 == 0 {
            (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
        } else {
            let mut y = x.clone();
            let j = rng.random_range(0..d);
            y[j] += scale * rng.sample::<f64, _>(StandardNormal);
            y
        };
        let gap = norm.dist(&x, &y);
        if gap == 0.0 {
            continue;
        }
        worst = worst.max(norm.dist(&op.expected(&x), &op.expected(&y)) / gap);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_tight() {
        let c = matrix_norm_interpolation_check(&DMatrix::identity(4, 4), 2.0, 1).unwrap();
        assert!((c.norm_p - 1.0).abs() < 1e-12 && c.holds);
    }

    #[test]
    fn rank_one_closed_form() {
        let u = nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let v = nalgebra::DVector::from_vec(vec![0.3, 0.1, 0.7]);
        let g = &u * v.transpose();
        let c = matrix_norm_interpolation_check(&g, 2.0, 3).unwrap();
        assert!((c.norm_p - u.norm() * v.norm()).abs() < 1e-10);
        assert!(c.holds);
    }

    #[test]
    fn rejects_negative() {
        let g = DMatrix::from_row_slice(1, 2, &[0.5, -0.1]);
        assert!(matrix_norm_interpolation_check(&g, 2.0, 0).is_err());
    }
}
