use crate::chain::{stationary_distribution, FiniteChain, PathWindow, TraceWindow, Transition};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, Start, TrajectoryStream};
use crate::rng::{rng_from_seed, SaRng};
use rand::Rng;
use std::collections::VecDeque;

/// Produces `Y_0, Y_1, ...`, one per call.
pub trait NoiseSampler<Y> {
    fn next_sample(&mut self) -> &Y;
}

/// `(S_k, A_k, S_{k+1})` read off a trajectory.
pub struct TransitionSampler {
    stream: TrajectoryStream,
    current: Transition,
}

impl TransitionSampler {
    pub fn new(mdp: &Mdp, pol: &Policy, start: &Start, seed: u64) -> Result<Self> {
        Ok(TransitionSampler {
            stream: TrajectoryStream::new(mdp, pol, start, seed)?,
            current: Transition { state: 0, action: 0, next_state: 0 },
        })
    }
}

impl NoiseSampler<Transition> for TransitionSampler {
    #[inline]
    fn next_sample(&mut self) -> &Transition {
        let st = self.stream.next_step();
        self.current = Transition { state: st.state, action: st.action, next_state: st.next_state };
        &self.current
    }
}

/// Overlapping windows `(S_k, A_k, ..., S_{k+n})`; keeps `n` steps of
/// lookahead.
pub struct PathWindowSampler {
    stream: TrajectoryStream,
    buf: VecDeque<(usize, usize, usize)>,
    n: usize,
    started: bool,
    current: PathWindow,
}

impl PathWindowSampler {
    pub fn new(mdp: &Mdp, pol: &Policy, n: usize, start: &Start, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("window length must be at least 1"));
        }
        Ok(PathWindowSampler {
            stream: TrajectoryStream::new(mdp, pol, start, seed)?,
            buf: VecDeque::with_capacity(n + 1),
            n,
            started: false,
            current: PathWindow { states: vec![0; n + 1], actions: vec![0; n] },
        })
    }
}

impl NoiseSampler<PathWindow> for PathWindowSampler {
    fn next_sample(&mut self) -> &PathWindow {
        if !self.started {
            for _ in 0..self.n {
                let st = self.stream.next_step();
                self.buf.push_back((st.state, st.action, st.next_state));
            }
            self.started = true;
        } else {
            self.buf.pop_front();
            let st = self.stream.next_step();
            self.buf.push_back((st.state, st.action, st.next_state));
        }
        for (i, &(s, a, t)) in self.buf.iter().enumerate() {
            self.current.states[i] = s;
            self.current.actions[i] = a;
            self.current.states[i + 1] = t;
        }
        &self.current
    }
}

/// Truncated-trace windows `(S_{k-tau}, ..., S_k, A_k, S_{k+1})`; shorter
/// while `k < tau`.
pub struct TraceWindowSampler {
    stream: TrajectoryStream,
    history: VecDeque<usize>,
    tau: usize,
    current: TraceWindow,
}

impl TraceWindowSampler {
    pub fn new(mdp: &Mdp, pol: &Policy, tau: usize, start: &Start, seed: u64) -> Result<Self> {
        Ok(TraceWindowSampler {
            stream: TrajectoryStream::new(mdp, pol, start, seed)?,
            history: VecDeque::with_capacity(tau + 1),
            tau,
            current: TraceWindow { states: Vec::with_capacity(tau + 2), action: 0 },
        })
    }
}

impl NoiseSampler<TraceWindow> for TraceWindowSampler {
    fn next_sample(&mut self) -> &TraceWindow {
        let st = self.stream.next_step();
        if self.history.len() == self.tau + 1 {
            self.history.pop_front();
        }
        self.history.push_back(st.state);
        self.current.states.clear();
        self.current.states.extend(self.history.iter().copied());
        self.current.states.push(st.next_state);
        self.current.action = st.action;
        &self.current
    }
}

/// Runs a lifted chain directly, started from its stationary law unless a
/// start state is given.
pub struct ChainSampler<'a, L> {
    chain: &'a FiniteChain<L>,
    cdfs: Vec<Vec<(usize, f64)>>,
    state: Option<usize>,
    start: usize,
    rng: SaRng,
}

impl<'a, L> ChainSampler<'a, L> {
    pub fn new(chain: &'a FiniteChain<L>, start_state: Option<usize>, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let start = match start_state {
            Some(s) if s < chain.len() => s,
            Some(s) => return Err(Error::arg(format!("start state {s} out of range"))),
            None => {
                let mu = stationary_distribution(chain)?;
                let u: f64 = rng.random::<f64>();
                let mut acc = 0.0;
                let mut pick = mu.len() - 1;
                for (i, m) in mu.iter().enumerate() {
                    acc += m;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        let cdfs = chain
            .rows
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|&(j, p)| {
                        acc += p;
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        Ok(ChainSampler { chain, cdfs, state: None, start, rng })
    }
}

impl<L> NoiseSampler<L> for ChainSampler<'_, L> {
    fn next_sample(&mut self) -> &L {
        let next = match self.state {
            None => self.start,
            Some(i) => {
                let row = &self.cdfs[i];
                let u = self.rng.random::<f64>() * row[row.len() - 1].1;
                row.iter().find(|e| u < e.1).map_or(row[row.len() - 1].0, |e| e.0)
            }
        };
        self.state = Some(next);
        &self.chain.labels[next]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, sample_trajectory};

    #[test]
    fn windows_match_trajectory() {
        let mdp = random_mdp(2, 4, 2, 3, 0.9).unwrap();
        let pol = Policy::uniform(4, 2);
        let traj = sample_trajectory(&mdp, &pol, &Start::State(1), 50, 5).unwrap();
        let mut w = PathWindowSampler::new(&mdp, &pol, 3, &Start::State(1), 5).unwrap();
        for k in 0usize..40 {
            let y = w.next_sample().clone();
            for i in 0..3 {
                assert_eq!(y.states[i], traj.steps[k + i].state);
                assert_eq!(y.actions[i], traj.steps[k + i].action);
            }
            assert_eq!(y.states[3], traj.steps[k + 2].next_state);
        }
        let mut t = TraceWindowSampler::new(&mdp, &pol, 2, &Start::State(1), 5).unwrap();
        for k in 0usize..40 {
            let y = t.next_sample().clone();
            let lo = k.saturating_sub(2);
            let expect: Vec<usize> = (lo..=k).map(|i| traj.steps[i].state).chain([traj.steps[k].next_state]).collect();
            assert_eq!(y.states, expect);
            assert_eq!(y.action, traj.steps[k].action);
        }
    }
}
