/// Vector norms used as contraction norms and for error measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl Norm {
    pub fn of(self, x: &[f64]) -> f64 {
        match self {
            Norm::L1 => x.iter().map(|v| v.abs()).sum(),
            Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::LInf => x.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        }
    }

    pub fn dist(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Norm::L1 => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
            Norm::L2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            Norm::LInf => x.iter().zip(y).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())),
        }
    }

    /// `||x - y||^2`, without the square root for the Euclidean case.
    pub fn sq_dist(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Norm::L2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
            n => n.dist(x, y).powi(2),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::LInf => "linf",
        })
    }
}
