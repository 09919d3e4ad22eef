//! Finite Markov chains: stationary laws, total-variation mixing and the
//! geometric `(C, sigma)` envelope fit.

mod lift;

pub use lift::{lift_nstep_chain, lift_q_chain, lift_trace_chain, PathWindow, TraceWindow, Transition, DEFAULT_MAX_LIFTED_STATES};

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::io::Write;

const ROW_TOL: f64 = 1e-12;
/// Distances at or below this are treated as numerically zero.
pub const TV_FLOOR: f64 = 1e-13;

/// A finite chain with sparse rows and one label per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain<L = usize> {
    pub labels: Vec<L>,
    /// `rows[i]` lists `(j, P(i, j))` for the positive entries.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl FiniteChain<usize> {
    pub fn from_dense(p: &DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() || p.nrows() == 0 {
            return Err(Error::dim("transition matrix must be square and non-empty"));
        }
        let rows = (0..p.nrows())
            .map(|i| (0..p.ncols()).filter(|&j| p[(i, j)] != 0.0).map(|j| (j, p[(i, j)])).collect())
            .collect();
        FiniteChain::new((0..p.nrows()).collect(), rows)
    }
}

impl<L> FiniteChain<L> {
    pub fn new(labels: Vec<L>, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if labels.len() != rows.len() || rows.is_empty() {
            return Err(Error::dim("need one label per row and at least one state"));
        }
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, p) in row {
                if j >= n || !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::arg(format!("row not stochastic: bad entry ({i}, {j}) = {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::arg(format!("row not stochastic: row {i} sums to {sum}")));
            }
        }
        Ok(FiniteChain { labels, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                m[(i, j)] += p;
            }
        }
        m
    }

    /// `mu P` for a row vector `mu`.
    pub fn step_distribution(&self, mu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let m = mu[i];
            if m == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j] += m * p;
            }
        }
    }
}

fn reach<L>(chain: &FiniteChain<L>, reverse: bool) -> Vec<bool> {
    let n = chain.len();
    let adj: Vec<Vec<usize>> = if reverse {
        let mut r = vec![Vec::new(); n];
        for (i, row) in chain.rows.iter().enumerate() {
            for &(j, p) in row {
                if p > 0.0 {
                    r[j].push(i);
                }
            }
        }
        r
    } else {
        chain.rows.iter().map(|row| row.iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect()).collect()
    };
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Checks irreducibility (one strongly connected class) and aperiodicity.
pub fn check_ergodic<L>(chain: &FiniteChain<L>) -> Result<()> {
    if !reach(chain, false).iter().all(|x| *x) || !reach(chain, true).iter().all(|x| *x) {
        return Err(Error::Reducible);
    }
    let n = chain.len();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut period = 0;
    while let Some(u) = queue.pop_front() {
        for &(v, p) in &chain.rows[u] {
            if p <= 0.0 {
                continue;
            }
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                period = gcd(period, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    if period > 1 {
        return Err(Error::Periodic(period));
    }
    Ok(())
}

/// Grassmann-Taksar-Heyman elimination; subtraction free, so accurate to
/// machine precision for irreducible chains.
fn gth(mut p: DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| p[(k, j)]).sum();
        for i in 0..k {
            p[(i, k)] /= s;
        }
        for i in 0..k {
            let pik = p[(i, k)];
            if pik != 0.0 {
                for j in 0..k {
                    p[(i, j)] += pik * p[(k, j)];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * p[(i, k)]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    pi
}

fn stationary_residual<L>(chain: &FiniteChain<L>, mu: &[f64], buf: &mut [f64]) -> f64 {
    chain.step_distribution(mu, buf);
    buf.iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

const DENSE_LIMIT: usize = 600;

/// Unique stationary law `mu` with `||mu P - mu||_inf <= 1e-12`.
pub fn stationary_distribution<L>(chain: &FiniteChain<L>) -> Result<Vec<f64>> {
    check_ergodic(chain)?;
    let n = chain.len();
    let mut buf = vec![0.0; n];
    let mut mu = if n <= DENSE_LIMIT { gth(chain.to_dense()) } else { vec![1.0 / n as f64; n] };
    let mut resid = stationary_residual(chain, &mu, &mut buf);
    let mut iters = 0usize;
    while resid > 1e-14 && iters < 1_000_000 {
        // Power iteration; for the dense path this only polishes rounding.
        std::mem::swap(&mut mu, &mut buf);
        let total: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|x| *x /= total);
        resid = stationary_residual(chain, &mu, &mut buf);
        iters += 1;
        if n <= DENSE_LIMIT && iters >= 50 {
            break;
        }
    }
    if resid > 1e-12 {
        return Err(Error::NotConverged(format!("stationary residual {resid:e}")));
    }
    Ok(mu)
}

/// `1/2 sum |d1 - d2|`.
pub fn total_variation(d1: &[f64], d2: &[f64]) -> Result<f64> {
    if d1.len() != d2.len() {
        return Err(Error::dim("distributions have different lengths"));
    }
    Ok(0.5 * d1.iter().zip(d2).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

const DECAY_DENSE_LIMIT: usize = 2000;

/// Iterates all rows of `P^k` and reports `d(k) = max_y TV(P^k(y, .), mu)`.
struct Decay<'a, L> {
    chain: &'a FiniteChain<L>,
    mu: Vec<f64>,
    rows: Vec<f64>,
    next: Vec<f64>,
}

impl<'a, L> Decay<'a, L> {
    fn new(chain: &'a FiniteChain<L>) -> Result<Self> {
        let n = chain.len();
        if n > DECAY_DENSE_LIMIT {
            return Err(Error::TooLarge(format!("{n} states; mixing is computed on chains with at most {DECAY_DENSE_LIMIT} states")));
        }
        let mu = stationary_distribution(chain)?;
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            rows[i * n + i] = 1.0;
        }
        Ok(Decay { chain, mu, rows, next: vec![0.0; n * n] })
    }

    fn distance(&self) -> f64 {
        let n = self.mu.len();
        (0..n)
            .map(|i| 0.5 * self.rows[i * n..(i + 1) * n].iter().zip(&self.mu).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn advance(&mut self) {
        let n = self.mu.len();
        for i in 0..n {
            let (src, dst) = (&self.rows[i * n..(i + 1) * n], &mut self.next[i * n..(i + 1) * n]);
            self.chain.step_distribution(src, dst);
        }
        std::mem::swap(&mut self.rows, &mut self.next);
    }
}

/// `d(0), ..., d(horizon)`.
pub fn tv_decay<L>(chain: &FiniteChain<L>, horizon: usize) -> Result<Vec<f64>> {
    let mut decay = Decay::new(chain)?;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(decay.distance());
    for _ in 0..horizon {
        decay.advance();
        out.push(decay.distance());
    }
    Ok(out)
}

const MIXING_CAP: usize = 1_000_000;

/// Smallest `k >= 0` with `max_y TV(P^k(y, .), mu) <= delta`.
pub fn mixing_time<L>(chain: &FiniteChain<L>, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::arg("delta must be positive"));
    }
    let mut decay = Decay::new(chain)?;
    for k in 0..=MIXING_CAP {
        if decay.distance() <= delta {
            return Ok(k);
        }
        decay.advance();
    }
    Err(Error::NotConverged(format!("mixing time exceeds {MIXING_CAP} steps")))
}

/// Geometric envelope `d(k) <= C sigma^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicityFit {
    pub c: f64,
    pub sigma: f64,
    pub max_k_used: usize,
    /// The chain hits its stationary law in one step, so any `sigma` works.
    pub exact_mixing: bool,
}

impl ErgodicityFit {
    /// Mixing-time bound implied by the envelope,
    /// `ceil((log(1/delta) + log(C/sigma)) / log(1/sigma))`, at least 0.
    pub fn mixing_bound(&self, delta: f64) -> usize {
        let t = ((1.0 / delta).ln() + (self.c / self.sigma).ln()) / (1.0 / self.sigma).ln();
        if t <= 0.0 {
            0
        } else {
            t.ceil() as usize
        }
    }
}

/// Fits `(C, sigma)` from the exact decay curve over `0..=horizon`:
/// `sigma` is the largest observed one-step ratio `d(k+1)/d(k)` among
/// `d(k) > 1e-13`, and `C = max_k d(k)/sigma^k`.
pub fn ergodicity_fit<L>(chain: &FiniteChain<L>, horizon: usize) -> Result<ErgodicityFit> {
    let d = tv_decay(chain, horizon.max(1))?;
    fit_from_decay(&d)
}

pub fn fit_from_decay(d: &[f64]) -> Result<ErgodicityFit> {
    // rounding noise below the floor can creep back up, so only the prefix
    // before the first sub-floor value is used
    let cut = d.iter().position(|x| *x <= TV_FLOOR).unwrap_or(d.len());
    let last = cut.checked_sub(1);
    let Some(last) = last else {
        return Ok(ErgodicityFit { c: 1.0, sigma: 0.5, max_k_used: 0, exact_mixing: true });
    };
    if last == 0 {
        let c = d[0].max(f64::MIN_POSITIVE);
        return Ok(ErgodicityFit { c, sigma: 0.5, max_k_used: 0, exact_mixing: true });
    }
    let ratios: Vec<f64> = (0..=last.min(d.len() - 2)).map(|k| d[k + 1] / d[k]).collect();
    // A flat stretch at the start (ratio 1) would give sigma = 1; fit the
    // rate after it and let C absorb the transient.
    let start = ratios.iter().rposition(|r| *r >= 1.0 - 1e-12).map_or(0, |i| i + 1);
    if start >= ratios.len() {
        return Err(Error::NotConverged("no geometric decay observed within the horizon".into()));
    }
    let sigma = ratios[start..].iter().copied().fold(0.0, f64::max).max(1e-300);
    let c = (0..=last).map(|k| d[k] / sigma.powi(k as i32)).fold(0.0, f64::max);
    Ok(ErgodicityFit { c, sigma, max_k_used: last, exact_mixing: false })
}

/// Exact decay curve plus a fitted envelope for mixing times below the
/// numerical floor.
#[derive(Debug, Clone)]
pub struct MixingProfile {
    pub decay: Vec<f64>,
    pub fit: ErgodicityFit,
}

impl MixingProfile {
    pub fn new<L>(chain: &FiniteChain<L>) -> Result<Self> {
        let mut decay = Decay::new(chain)?;
        let mut d = vec![decay.distance()];
        let mut best = d[0];
        while best > 1e-15 && d.len() < 100_000 {
            decay.advance();
            let x = decay.distance();
            d.push(x);
            if x < 1e-12 && x >= best {
                // hit the rounding floor
                break;
            }
            best = best.min(x);
        }
        let fit = fit_from_decay(&d)?;
        Ok(MixingProfile { decay: d, fit })
    }

    /// Exact `t_delta` where resolvable, otherwise the envelope bound.
    pub fn mixing_time(&self, delta: f64) -> usize {
        if let Some(k) = self.decay.iter().position(|x| *x <= delta) {
            if delta >= 1e-14 || self.decay[k] == 0.0 {
                return k;
            }
        }
        self.fit.mixing_bound(delta).max(self.decay.len())
    }
}

/// CSV `k,tv_max` for `k = 0..=horizon`.
pub fn write_decay_csv<W: Write>(mut w: W, decay: &[f64]) -> std::io::Result<()> {
    writeln!(w, "k,tv_max")?;
    for (k, d) in decay.iter().enumerate() {
        writeln!(w, "{k},{d:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]]) -> FiniteChain {
        let n = rows.len();
        FiniteChain::from_dense(&DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn two_state_stationary() {
        let mu = stationary_distribution(&dense(&[&[0.9, 0.1], &[0.5, 0.5]])).unwrap();
        assert!((mu[0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((mu[1] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn identity_is_reducible_and_flip_is_periodic() {
        assert!(matches!(stationary_distribution(&dense(&[&[1.0, 0.0], &[0.0, 1.0]])), Err(Error::Reducible)));
        assert!(matches!(stationary_distribution(&dense(&[&[0.0, 1.0], &[1.0, 0.0]])), Err(Error::Periodic(2))));
    }

    #[test]
    fn flip_quarter_mixing() {
        let c = dense(&[&[0.75, 0.25], &[0.25, 0.75]]);
        assert_eq!(mixing_time(&c, 0.01).unwrap(), 6);
        assert_eq!(mixing_time(&c, 1.0).unwrap(), 0);
        let fit = ergodicity_fit(&c, 200).unwrap();
        assert!((fit.sigma - 0.5).abs() < 1e-12);
        assert!((fit.c - 0.5).abs() < 1e-12);
        assert!(!fit.exact_mixing);
    }

    #[test]
    fn rows_equal_to_mu_mix_in_one_step() {
        let c = dense(&[&[0.3, 0.7], &[0.3, 0.7]]);
        assert_eq!(mixing_time(&c, 0.01).unwrap(), 1);
        let fit = ergodicity_fit(&c, 50).unwrap();
        assert!(fit.exact_mixing);
        assert_eq!(fit.sigma, 0.5);
        let d = tv_decay(&c, 50).unwrap();
        for (k, x) in d.iter().enumerate() {
            assert!(*x <= fit.c * fit.sigma.powi(k as i32) + 1e-12);
        }
    }

    #[test]
    fn gth_matches_power_iteration_on_large_chain() {
        let n = 700;
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 0.5), ((i + 1) % n, 0.3), ((i * 7 + 3) % n, 0.2)]).collect();
        let chain = FiniteChain::new((0..n).collect(), rows).unwrap();
        let mu = stationary_distribution(&chain).unwrap();
        let mut buf = vec![0.0; n];
        assert!(stationary_residual(&chain, &mu, &mut buf) <= 1e-12);
    }
}
