//! Data-parallel helpers. With the `parallel` feature the Monte-Carlo loops
//! fan out over rayon; without it everything runs on the calling thread.
//! Results are always collected in index order and reduced in a fixed
//! pairwise order, so both paths produce bit-identical output.

/// How independent replications are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon worker pool, optionally capped. Falls back to sequential when
    /// the crate is built without the `parallel` feature.
    #[default]
    Parallel,
    ParallelWith(usize),
}

impl Execution {
    /// `Parallel`, capped by the `SALAB_THREADS` environment variable if set.
    pub fn from_env() -> Self {
        match std::env::var("SALAB_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            Some(0) | None => Execution::Parallel,
            Some(1) => Execution::Sequential,
            Some(n) => Execution::ParallelWith(n),
        }
    }
}

/// `(0..n).map(f)` collected in order, possibly in parallel.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        #[cfg(feature = "parallel")]
        Execution::ParallelWith(threads) => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                Err(_) => (0..n).map(f).collect(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        _ => (0..n).map(f).collect(),
    }
}

/// Pairwise (cascade) summation with a fixed split order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Running mean/variance per coordinate.
#[derive(Debug, Clone)]
pub struct Moments {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Moments { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Chan et al. merge of two partial results.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    /// Standard error of the mean per coordinate.
    pub fn stderr(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.m2.iter().map(|s| if self.count > 1 { (s / (n - 1.0) / n).sqrt() } else { f64::NAN }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_keeps_order() {
        let seq = map_indexed(100, Execution::Sequential, |i| i * i);
        let par = map_indexed(100, Execution::Parallel, |i| i * i);
        let capped = map_indexed(100, Execution::ParallelWith(2), |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq, capped);
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..57).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let mut all = Moments::new(1);
        xs.iter().for_each(|x| all.push(&[*x]));
        let mut a = Moments::new(1);
        let mut b = Moments::new(1);
        xs[..20].iter().for_each(|x| a.push(&[*x]));
        xs[20..].iter().for_each(|x| b.push(&[*x]));
        a.merge(&b);
        assert!((a.mean[0] - all.mean[0]).abs() < 1e-12);
        assert!((a.m2[0] - all.m2[0]).abs() < 1e-10);
    }

    #[test]
    fn pairwise_sum_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }
}
