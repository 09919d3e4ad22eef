use super::{Mdp, Policy};
use crate::chain::{stationary_distribution, FiniteChain};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SaRng};
use rand::Rng;

/// One transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub seed: u64,
}

/// Initial state of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    State(usize),
    Distribution(Vec<f64>),
    /// The stationary distribution of the policy-induced state chain.
    Stationary,
}

impl Start {
    /// Turns `Stationary` into an explicit distribution.
    pub fn resolve(&self, mdp: &Mdp, pol: &Policy) -> Result<Start> {
        match self {
            Start::Stationary => {
                let chain = FiniteChain::from_dense(&super::policy_transition(mdp, pol)?)?;
                Ok(Start::Distribution(stationary_distribution(&chain)?))
            }
            other => Ok(other.clone()),
        }
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

#[inline]
fn draw(cdf: &[f64], u: f64) -> usize {
    let total = cdf[cdf.len() - 1];
    let target = u * total;
    cdf.iter().position(|c| target < *c).unwrap_or_else(|| {
        // u * total can round up to total; take the last positive-mass entry
        let mut i = cdf.len() - 1;
        while i > 0 && cdf[i] == cdf[i - 1] {
            i -= 1;
        }
        i
    })
}

/// Streaming sampler of `(s, a, r, s')` steps. All algorithm runners and
/// trajectory-backed noise samplers consume this stream, so equal seeds give
/// identical sample paths.
#[derive(Debug, Clone)]
pub struct TrajectoryStream {
    num_states: usize,
    num_actions: usize,
    action_cdf: Vec<Vec<f64>>,
    next_cdf: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    state: usize,
    rng: SaRng,
}

impl TrajectoryStream {
    pub fn new(mdp: &Mdp, pol: &Policy, start: &Start, seed: u64) -> Result<Self> {
        pol.check_shape(mdp)?;
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let mut rng = rng_from_seed(seed);
        let state = match start.resolve(mdp, pol)? {
            Start::State(s) => {
                if s >= ns {
                    return Err(Error::arg(format!("start state {s} out of range")));
                }
                s
            }
            Start::Distribution(d) => {
                if d.len() != ns {
                    return Err(Error::dim("start distribution length"));
                }
                draw(&cumulative(d.iter().copied()), rng.random::<f64>())
            }
            Start::Stationary => unreachable!(),
        };
        let action_cdf = (0..ns).map(|s| cumulative((0..na).map(|a| pol.prob(s, a)))).collect();
        let next_cdf = (0..ns)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| cumulative((0..ns).map(|t| mdp.p(a, s, t))))
            .collect();
        let rewards = (0..ns).flat_map(|s| (0..na).map(move |a| (s, a))).map(|(s, a)| mdp.r(s, a)).collect();
        Ok(TrajectoryStream { num_states: ns, num_actions: na, action_cdf, next_cdf, rewards, state, rng })
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn next_step(&mut self) -> Step {
        let s = self.state;
        let a = draw(&self.action_cdf[s], self.rng.random::<f64>());
        let idx = s * self.num_actions + a;
        let t = draw(&self.next_cdf[idx], self.rng.random::<f64>());
        self.state = t;
        Step { state: s, action: a, reward: self.rewards[idx], next_state: t }
    }
}

pub fn sample_trajectory(mdp: &Mdp, pol: &Policy, start: &Start, length: usize, seed: u64) -> Result<Trajectory> {
    let mut stream = TrajectoryStream::new(mdp, pol, start, seed)?;
    let steps = (0..length).map(|_| stream.next_step()).collect();
    Ok(Trajectory { steps, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    #[test]
    fn reproducible_and_consistent() {
        let mdp = random_mdp(1, 5, 2, 3, 0.9).unwrap();
        let pol = Policy::uniform(5, 2);
        let a = sample_trajectory(&mdp, &pol, &Start::State(0), 500, 77).unwrap();
        let b = sample_trajectory(&mdp, &pol, &Start::State(0), 500, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps[0].state, 0);
        for w in a.steps.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
            assert!(mdp.p(w[0].action, w[0].state, w[0].next_state) > 0.0);
        }
    }

    #[test]
    fn draw_never_picks_zero_mass() {
        let cdf = cumulative([0.0, 0.5, 0.0, 0.5, 0.0].into_iter());
        assert_eq!(draw(&cdf, 0.0), 1);
        assert_eq!(draw(&cdf, 0.999_999), 3);
        assert_eq!(draw(&cdf, 1.0), 3);
    }
}
