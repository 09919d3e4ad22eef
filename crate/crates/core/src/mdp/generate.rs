use super::{Mdp, Policy};
use crate::error::{Error, Result};
use crate::rng::child_rng;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::Exp1;

fn dirichlet_ones<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Garnet-style random MDP: each `(s, a)` moves to `branching` distinct
/// successors drawn uniformly, with Dirichlet(1, ..., 1) weights; rewards
/// are uniform on `[0, 1]`.
pub fn random_mdp(seed: u64, num_states: usize, num_actions: usize, branching: usize, gamma: f64) -> Result<Mdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::arg("need at least one state and one action"));
    }
    if branching == 0 || branching > num_states {
        return Err(Error::arg(format!("branching {branching} must lie in 1..={num_states}")));
    }
    let mut rng = child_rng(seed, "mdp", 0);
    let mut transitions = vec![DMatrix::zeros(num_states, num_states); num_actions];
    for s in 0..num_states {
        for p in transitions.iter_mut() {
            let succ = sample(&mut rng, num_states, branching);
            let w = dirichlet_ones(&mut rng, branching);
            for (t, wt) in succ.iter().zip(w) {
                p[(s, t)] = wt;
            }
        }
    }
    let rewards = DMatrix::from_fn(num_states, num_actions, |_, _| rng.random::<f64>());
    Mdp::new(transitions, rewards, gamma)
}

/// Random full-support policy with Dirichlet(1, ..., 1) rows.
pub fn random_policy(seed: u64, num_states: usize, num_actions: usize) -> Policy {
    let mut rng = child_rng(seed, "policy", 0);
    let mut probs = DMatrix::zeros(num_states, num_actions);
    for s in 0..num_states {
        for (a, w) in dirichlet_ones(&mut rng, num_actions).into_iter().enumerate() {
            probs[(s, a)] = w;
        }
    }
    Policy { probs }
}
