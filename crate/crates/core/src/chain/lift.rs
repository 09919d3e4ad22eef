//! Chains lifted from an MDP and a policy: the noise processes that drive
//! the reinforcement-learning recursions.

use super::{stationary_distribution, FiniteChain};
use crate::error::{Assumption, Error, Result};
use crate::mdp::{policy_transition, Mdp, Policy};
use std::collections::HashMap;

pub const DEFAULT_MAX_LIFTED_STATES: usize = 2_000_000;

/// `(s, a, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

/// `(s_0, a_0, s_1, ..., a_{n-1}, s_n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathWindow {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl PathWindow {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `(s_{k-tau}, ..., s_k, a_k, s_{k+1})`: the last `tau + 1` visited states,
/// the action taken in the newest one and its successor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceWindow {
    /// Oldest first; the last entry is `s_{k+1}`.
    pub states: Vec<usize>,
    pub action: usize,
}

impl TraceWindow {
    pub fn current_state(&self) -> usize {
        self.states[self.states.len() - 2]
    }

    pub fn next_state(&self) -> usize {
        self.states[self.states.len() - 1]
    }
}

fn ensure_ergodic_state_chain(mdp: &Mdp, pol: &Policy) -> Result<()> {
    let chain = FiniteChain::from_dense(&policy_transition(mdp, pol)?)?;
    stationary_distribution(&chain).map(|_| ()).map_err(|e| match e {
        Error::Reducible | Error::Periodic(_) => {
            Error::assumption(Assumption::ErgodicChain, format!("state chain under the policy: {e}"))
        }
        e => e,
    })
}

/// Builds a chain over sorted labels from a successor function.
fn build<L, F>(mut labels: Vec<L>, successors: F) -> Result<FiniteChain<L>>
where
    L: Clone + Eq + std::hash::Hash + Ord,
    F: Fn(&L) -> Vec<(L, f64)>,
{
    labels.sort();
    let index: HashMap<L, usize> = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
    let mut rows = Vec::with_capacity(labels.len());
    for l in &labels {
        let mut row = Vec::new();
        for (next, p) in successors(l) {
            let j = *index.get(&next).ok_or_else(|| Error::InvalidArgument("lifted successor outside the enumerated set".into()))?;
            row.push((j, p));
        }
        rows.push(row);
    }
    FiniteChain::new(labels, rows)
}

/// Positive-probability `(a, s')` moves out of `s`.
fn moves(mdp: &Mdp, pol: &Policy, s: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for a in 0..mdp.num_actions() {
        let pa = pol.prob(s, a);
        if pa <= 0.0 {
            continue;
        }
        for t in 0..mdp.num_states() {
            let pt = mdp.p(a, s, t);
            if pt > 0.0 {
                out.push((a, t, pa * pt));
            }
        }
    }
    out
}

/// Chain over `(s, a, s')` with kernel `pi_b(a'|s') P_{a'}(s', s'')`. The
/// behaviour policy must put positive mass on every action.
pub fn lift_q_chain(mdp: &Mdp, behavior: &Policy) -> Result<FiniteChain<Transition>> {
    behavior.check_shape(mdp)?;
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            if behavior.prob(s, a) <= 0.0 {
                return Err(Error::assumption(
                    Assumption::FullSupportBehavior,
                    format!("behaviour policy gives action {a} zero probability in state {s}"),
                ));
            }
        }
    }
    ensure_ergodic_state_chain(mdp, behavior)?;
    let mut labels = Vec::new();
    for s in 0..mdp.num_states() {
        for (a, t, _) in moves(mdp, behavior, s) {
            labels.push(Transition { state: s, action: a, next_state: t });
        }
    }
    build(labels, |l| {
        moves(mdp, behavior, l.next_state)
            .into_iter()
            .map(|(a, t, p)| (Transition { state: l.next_state, action: a, next_state: t }, p))
            .collect()
    })
}

fn count_paths(mdp: &Mdp, pol: &Policy, steps: usize, first_actionless: usize) -> f64 {
    // Number of positive-probability paths; the first `first_actionless`
    // steps are counted by state only (actions marginalised).
    let ns = mdp.num_states();
    let mut cnt = vec![1.0f64; ns];
    for i in 0..steps {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if i < first_actionless {
                let mut seen = vec![false; ns];
                for (_, t, _) in moves(mdp, pol, s) {
                    seen[t] = true;
                }
                for t in 0..ns {
                    if seen[t] {
                        next[t] += cnt[s];
                    }
                }
            } else {
                for (_, t, _) in moves(mdp, pol, s) {
                    next[t] += cnt[s];
                }
            }
        }
        cnt = next;
    }
    cnt.iter().sum()
}

/// Chain over `n`-step path windows. Refuses to enumerate more than
/// `max_states` windows; use trajectory sampling for such problems.
pub fn lift_nstep_chain(mdp: &Mdp, pol: &Policy, n: usize, max_states: usize) -> Result<FiniteChain<PathWindow>> {
    pol.check_shape(mdp)?;
    if n == 0 {
        return Err(Error::arg("window length n must be at least 1"));
    }
    ensure_ergodic_state_chain(mdp, pol)?;
    let total = count_paths(mdp, pol, n, 0);
    if total > max_states as f64 {
        return Err(Error::TooLarge(format!(
            "{total} path windows exceed the cap of {max_states}; use trajectory (Monte-Carlo) sampling instead"
        )));
    }
    let mut labels = Vec::new();
    let mut stack: Vec<PathWindow> =
        (0..mdp.num_states()).map(|s| PathWindow { states: vec![s], actions: Vec::new() }).collect();
    while let Some(w) = stack.pop() {
        if w.actions.len() == n {
            labels.push(w);
            continue;
        }
        for (a, t, _) in moves(mdp, pol, *w.states.last().unwrap()) {
            let mut x = w.clone();
            x.actions.push(a);
            x.states.push(t);
            stack.push(x);
        }
    }
    build(labels, |w| {
        let last = *w.states.last().unwrap();
        moves(mdp, pol, last)
            .into_iter()
            .map(|(a, t, p)| {
                let mut states = w.states[1..].to_vec();
                states.push(t);
                let mut actions = w.actions[1..].to_vec();
                actions.push(a);
                (PathWindow { states, actions }, p)
            })
            .collect()
    })
}

/// Chain over truncated-trace windows `(s_{k-tau}, ..., s_k, a_k, s_{k+1})`.
pub fn lift_trace_chain(mdp: &Mdp, pol: &Policy, tau: usize, max_states: usize) -> Result<FiniteChain<TraceWindow>> {
    pol.check_shape(mdp)?;
    ensure_ergodic_state_chain(mdp, pol)?;
    let total = count_paths(mdp, pol, tau + 1, tau);
    if total > max_states as f64 {
        return Err(Error::TooLarge(format!(
            "{total} trace windows exceed the cap of {max_states}; use trajectory (Monte-Carlo) sampling instead"
        )));
    }
    let p_pi = policy_transition(mdp, pol)?;
    let ns = mdp.num_states();
    let mut prefixes: Vec<Vec<usize>> = (0..ns).map(|s| vec![s]).collect();
    for _ in 0..tau {
        let mut next = Vec::new();
        for pre in prefixes {
            let last = *pre.last().unwrap();
            for t in 0..ns {
                if p_pi[(last, t)] > 0.0 {
                    let mut x = pre.clone();
                    x.push(t);
                    next.push(x);
                }
            }
        }
        prefixes = next;
    }
    let mut labels = Vec::new();
    for pre in prefixes {
        for (a, t, _) in moves(mdp, pol, *pre.last().unwrap()) {
            let mut states = pre.clone();
            states.push(t);
            labels.push(TraceWindow { states, action: a });
        }
    }
    build(labels, |w| {
        let s = w.next_state();
        moves(mdp, pol, s)
            .into_iter()
            .map(|(a, t, p)| {
                let mut states = w.states[1..].to_vec();
                states.push(t);
                (TraceWindow { states, action: a }, p)
            })
            .collect()
    })
}
