use super::engine::{run_sa, MartingaleNoise};
use super::samplers::NoiseSampler;
use super::stepsize::StepsizeSchedule;
use crate::error::{Error, Result};
use crate::operators::AsyncOperator;
use crate::par::{map_indexed, pairwise_sum, Execution};
use crate::rng::derive_seed;
use std::io::Write;

/// Mean squared error `E ||x_k - x*||_c^2` across independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MseCurve {
    pub checkpoints: Vec<usize>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub num_runs: usize,
    /// Mean over the last 10% of checkpoints (at least one), with the
    /// standard error of the per-run plateau averages.
    pub plateau: f64,
    pub plateau_stderr: f64,
}

impl MseCurve {
    /// Builds the curve from per-run squared errors, `errors[run][checkpoint]`.
    pub fn from_runs(checkpoints: Vec<usize>, errors: &[Vec<f64>]) -> Result<Self> {
        let n = errors.len();
        if n < 2 {
            return Err(Error::arg("need at least two runs for a standard error"));
        }
        let m = checkpoints.len();
        if errors.iter().any(|e| e.len() != m) {
            return Err(Error::dim("run length differs from checkpoint count"));
        }
        let nf = n as f64;
        let mut mean = Vec::with_capacity(m);
        let mut stderr = Vec::with_capacity(m);
        let mut col = vec![0.0; n];
        for j in 0..m {
            for (c, e) in col.iter_mut().zip(errors) {
                *c = e[j];
            }
            let (mu, se) = mean_stderr(&mut col, nf);
            mean.push(mu);
            stderr.push(se);
        }
        let tail = (m / 10).max(1);
        let mut per_run: Vec<f64> = errors.iter().map(|e| pairwise_sum(&e[m - tail..]) / tail as f64).collect();
        let (plateau, plateau_stderr) = mean_stderr(&mut per_run, nf);
        Ok(MseCurve { checkpoints, mean, stderr, num_runs: n, plateau, plateau_stderr })
    }

    /// CSV `k,mse,stderr,n_runs`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,mse,stderr,n_runs")?;
        for ((k, m), s) in self.checkpoints.iter().zip(&self.mean).zip(&self.stderr) {
            writeln!(w, "{k},{m:e},{s:e},{}", self.num_runs)?;
        }
        Ok(())
    }

    /// First checkpoint whose mean error is at most `factor * plateau`.
    pub fn first_below(&self, factor: f64) -> Option<usize> {
        self.mean.iter().position(|m| *m <= factor * self.plateau).map(|i| self.checkpoints[i])
    }
}

fn mean_stderr(xs: &mut [f64], n: f64) -> (f64, f64) {
    let mu = pairwise_sum(xs) / n;
    for x in xs.iter_mut() {
        *x = (*x - mu) * (*x - mu);
    }
    let var = pairwise_sum(xs) / (n - 1.0);
    (mu, (var / n).sqrt())
}

/// Runs `num_runs` independent replications; `run(i)` returns the squared
/// errors at each checkpoint for replication `i`.
pub fn monte_carlo_mse<F>(checkpoints: &[usize], num_runs: usize, exec: Execution, run: F) -> Result<MseCurve>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    if num_runs < 2 {
        return Err(Error::arg("num_runs must be at least 2"));
    }
    let results = map_indexed(num_runs, exec, run);
    let errors = results.into_iter().collect::<Result<Vec<_>>>()?;
    MseCurve::from_runs(checkpoints.to_vec(), &errors)
}

/// MSE curve of `run_sa` against the operator's fixed point. Replication
/// `i` uses the sampler `make_sampler(seed_i)` and noise seed `seed_i`,
/// both derived from `base_seed`.
#[allow(clippy::too_many_arguments)]
pub fn mse_curve<O, S, M>(
    op: &O,
    make_sampler: M,
    schedule: &StepsizeSchedule,
    noise: &MartingaleNoise,
    x0: &[f64],
    horizon: usize,
    checkpoints: &[usize],
    num_runs: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<MseCurve>
where
    O: AsyncOperator,
    S: NoiseSampler<O::Sample>,
    M: Fn(u64) -> Result<S> + Sync + Send,
{
    let target = op.fixed_point().to_vec();
    let norm = op.norm();
    monte_carlo_mse(checkpoints, num_runs, exec, |i| {
        let seed = derive_seed(base_seed, "run", i as u64);
        let mut sampler = make_sampler(seed)?;
        let log = run_sa(op, &mut sampler, schedule, noise, x0, horizon, checkpoints, seed)?;
        Ok(log.iterates.iter().map(|x| norm.sq_dist(x, &target)).collect())
    })
}
