use nalgebra::DMatrix;
use proptest::prelude::*;
use salab::chain::{
    ergodicity_fit, lift_nstep_chain, lift_q_chain, mixing_time, stationary_distribution, total_variation, tv_decay, FiniteChain,
    DEFAULT_MAX_LIFTED_STATES,
};
use salab::mdp::{
    bellman_optimality, policy_reward, policy_transition, random_mdp, random_policy, sample_trajectory, solve_optimal_q, solve_value_function,
    validate_mdp, Mdp, Policy, QFunction, Start,
};
use salab::operators::state_stationary;
use salab::Error;

fn scalar_mdp(r: f64, gamma: f64) -> Mdp {
    Mdp::new(vec![DMatrix::from_element(1, 1, 1.0)], DMatrix::from_element(1, 1, r), gamma).unwrap()
}

fn chain(rows: &[&[f64]]) -> FiniteChain {
    let n = rows.len();
    FiniteChain::from_dense(&DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
}

#[test]
fn validation_messages() {
    assert!(validate_mdp(&scalar_mdp(0.5, 0.9)).is_ok());
    let bad_row = Mdp { transitions: vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5])], rewards: DMatrix::zeros(2, 1), gamma: 0.9 };
    assert!(validate_mdp(&bad_row).unwrap_err().to_string().contains("row not stochastic"));
    let bad_reward = Mdp { transitions: vec![DMatrix::from_element(1, 1, 1.0)], rewards: DMatrix::from_element(1, 1, 1.5), gamma: 0.9 };
    assert!(validate_mdp(&bad_reward).unwrap_err().to_string().contains("reward out of range"));
    let bad_gamma = Mdp { gamma: 1.0, ..scalar_mdp(0.5, 0.9) };
    assert!(validate_mdp(&bad_gamma).unwrap_err().to_string().contains("discount"));
}

#[test]
fn bellman_examples() {
    let one = scalar_mdp(1.0, 0.5);
    assert_eq!(bellman_optimality(&one, &QFunction::zeros(1, 1)).unwrap().values, vec![1.0]);

    let mut mdp = random_mdp(3, 3, 2, 2, 0.9).unwrap();
    mdp.gamma = 0.0;
    let q = QFunction::from_vec(3, 2, vec![5.0, -1.0, 2.0, 0.3, 7.0, 1.0]).unwrap();
    let h = bellman_optimality(&mdp, &q).unwrap();
    for s in 0..3 {
        for a in 0..2 {
            assert_eq!(h.get(s, a), mdp.r(s, a));
        }
    }

    let mdp = random_mdp(4, 3, 2, 3, 0.9).unwrap();
    let (q_star, _) = solve_optimal_q(&mdp).unwrap();
    let hq = bellman_optimality(&mdp, &q_star).unwrap();
    let resid = hq.values.iter().zip(&q_star.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(resid <= 1e-8);
    assert!(bellman_optimality(&mdp, &QFunction::zeros(2, 2)).is_err());
}

#[test]
fn policy_algebra() {
    let mdp = random_mdp(9, 4, 2, 3, 0.8).unwrap();
    let first = Policy::deterministic(&[0, 0, 0, 0], 2);
    assert_eq!(policy_transition(&mdp, &first).unwrap(), mdp.transitions[0]);
    let uniform = policy_transition(&mdp, &Policy::uniform(4, 2)).unwrap();
    let avg = (&mdp.transitions[0] + &mdp.transitions[1]) * 0.5;
    assert!((uniform - avg).abs().max() < 1e-15);

    let pol = random_policy(10, 4, 2);
    let p = policy_transition(&mdp, &pol).unwrap();
    for s in 0..4 {
        assert!((p.row(s).sum() - 1.0).abs() < 1e-12);
    }
    let r = policy_reward(&mdp, &pol).unwrap();
    for s in 0..4 {
        let lo = mdp.r(s, 0).min(mdp.r(s, 1));
        let hi = mdp.r(s, 0).max(mdp.r(s, 1));
        assert!(r[s] >= lo - 1e-15 && r[s] <= hi + 1e-15);
    }
    let halves = Mdp::new(vec![DMatrix::from_element(1, 1, 1.0); 2], DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), 0.5).unwrap();
    assert_eq!(policy_reward(&halves, &Policy::uniform(1, 2)).unwrap(), vec![0.5]);
}

#[test]
fn exact_solvers() {
    assert!((solve_value_function(&scalar_mdp(1.0, 0.5), &Policy::uniform(1, 1)).unwrap().values[0] - 2.0).abs() < 1e-14);
    assert_eq!(solve_value_function(&scalar_mdp(0.0, 0.5), &Policy::uniform(1, 1)).unwrap().values, vec![0.0]);
    assert!((solve_optimal_q(&scalar_mdp(1.0, 0.5)).unwrap().0.values[0] - 2.0).abs() < 1e-11);

    let mdp = random_mdp(12, 4, 2, 4, 0.9).unwrap();
    let (q_star, greedy) = solve_optimal_q(&mdp).unwrap();
    let v = solve_value_function(&mdp, &greedy).unwrap();
    // Q of the greedy policy from its value function
    for s in 0..4 {
        for a in 0..2 {
            let ev: f64 = (0..4).map(|t| mdp.p(a, s, t) * v.values[t]).sum();
            let q = mdp.r(s, a) + mdp.gamma * ev;
            assert!((q - q_star.get(s, a)).abs() <= 1e-8);
        }
    }
}

#[test]
fn trajectories() {
    let det = Mdp::new(vec![DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0])], DMatrix::zeros(3, 1), 0.9).unwrap();
    let t = sample_trajectory(&det, &Policy::uniform(3, 1), &Start::State(1), 5, 0).unwrap();
    let states: Vec<usize> = t.steps.iter().map(|s| s.state).collect();
    assert_eq!(states, vec![1, 2, 0, 1, 2]);
    assert!(sample_trajectory(&det, &Policy::uniform(3, 1), &Start::State(0), 0, 0).unwrap().steps.is_empty());

    let mdp = random_mdp(14, 5, 2, 3, 0.9).unwrap();
    let pol = random_policy(15, 5, 2);
    let t = sample_trajectory(&mdp, &pol, &Start::Stationary, 1000, 99).unwrap();
    for w in t.steps.windows(2) {
        assert_eq!(w[0].next_state, w[1].state);
    }
    assert!(t.steps.iter().all(|s| pol.prob(s.state, s.action) > 0.0));
    assert_eq!(t, sample_trajectory(&mdp, &pol, &Start::Stationary, 1000, 99).unwrap());
}

#[test]
fn long_trajectory_visits_match_stationary_law() {
    // two-state chain [[0.9, 0.1], [0.5, 0.5]] with mu = (5/6, 1/6)
    let mdp = Mdp::new(vec![DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5])], DMatrix::zeros(2, 1), 0.9).unwrap();
    let pol = Policy::uniform(2, 1);
    let batches = 50;
    let per_batch = 20_000;
    let mut fractions = Vec::new();
    for b in 0..batches {
        let t = sample_trajectory(&mdp, &pol, &Start::Stationary, per_batch, b).unwrap();
        fractions.push(t.steps.iter().filter(|s| s.state == 0).count() as f64 / per_batch as f64);
    }
    let mean = fractions.iter().sum::<f64>() / batches as f64;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    let se = (var / batches as f64).sqrt();
    assert!((mean - 5.0 / 6.0).abs() <= 3.0 * se, "{mean} +- {se}");
}

#[test]
fn stationary_examples() {
    let mu = stationary_distribution(&chain(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
    assert!((mu[0] - 0.5).abs() < 1e-15);
    let mu = stationary_distribution(&chain(&[&[0.9, 0.1], &[0.5, 0.5]])).unwrap();
    assert!((mu[0] - 5.0 / 6.0).abs() < 1e-14 && (mu[1] - 1.0 / 6.0).abs() < 1e-14);
    let err = stationary_distribution(&chain(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap_err();
    assert!(matches!(err, Error::Reducible), "{err}");
}

#[test]
fn total_variation_examples() {
    assert_eq!(total_variation(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert!((total_variation(&[0.7, 0.3], &[0.4, 0.6]).unwrap() - 0.3).abs() < 1e-15);
}

#[test]
fn mixing_examples() {
    let flip = chain(&[&[0.75, 0.25], &[0.25, 0.75]]);
    assert_eq!(mixing_time(&flip, 0.01).unwrap(), 6);
    assert_eq!(mixing_time(&flip, 1.0).unwrap(), 0);
    let fit = ergodicity_fit(&flip, 200).unwrap();
    assert!((fit.sigma - 0.5).abs() < 1e-9 && (fit.c - 0.5).abs() < 1e-9);
    let iid = chain(&[&[0.3, 0.7], &[0.3, 0.7]]);
    assert_eq!(mixing_time(&iid, 0.1).unwrap(), 1);
    assert!(ergodicity_fit(&iid, 50).unwrap().exact_mixing);
}

#[test]
fn lifted_chains() {
    let one = scalar_mdp(0.5, 0.9);
    let q = lift_q_chain(&one, &Policy::uniform(1, 1)).unwrap();
    assert_eq!(q.len(), 1);
    assert_eq!(stationary_distribution(&q).unwrap(), vec![1.0]);

    let cycle = Mdp::new(vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])], DMatrix::zeros(2, 1), 0.9).unwrap();
    assert!(lift_q_chain(&cycle, &Policy::uniform(2, 1)).unwrap_err().is_assumption());
    assert!(lift_nstep_chain(&cycle, &Policy::uniform(2, 1), 2, DEFAULT_MAX_LIFTED_STATES).unwrap_err().is_assumption());

    let mdp = random_mdp(17, 4, 2, 3, 0.9).unwrap();
    let pol = random_policy(18, 4, 2);
    let one_step = lift_nstep_chain(&mdp, &pol, 1, DEFAULT_MAX_LIFTED_STATES).unwrap();
    let q = lift_q_chain(&mdp, &pol).unwrap();
    assert_eq!(one_step.len(), q.len());
    let kappa = state_stationary(&mdp, &pol).unwrap();
    let mu = stationary_distribution(&q).unwrap();
    for (label, m) in q.labels.iter().zip(&mu) {
        let expect = kappa[label.state] * pol.prob(label.state, label.action) * mdp.p(label.action, label.state, label.next_state);
        assert!((m - expect).abs() < 1e-10);
    }
}

fn arb_chain() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..7).prop_flat_map(|n| {
        prop::collection::vec(0.05f64..1.0, n * n).prop_map(move |w| {
            let mut m = DMatrix::from_row_slice(n, n, &w);
            for i in 0..n {
                let s = m.row(i).sum();
                m.row_mut(i).iter_mut().for_each(|x| *x /= s);
            }
            m
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_law_is_invariant(p in arb_chain()) {
        let c = FiniteChain::from_dense(&p).unwrap();
        let mu = stationary_distribution(&c).unwrap();
        prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(mu.iter().all(|m| *m >= 0.0));
        let n = mu.len();
        for j in 0..n {
            let next: f64 = (0..n).map(|i| mu[i] * p[(i, j)]).sum();
            prop_assert!((next - mu[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_is_monotone_and_envelope_holds(p in arb_chain()) {
        let c = FiniteChain::from_dense(&p).unwrap();
        let d = tv_decay(&c, 200).unwrap();
        prop_assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(d.iter().all(|x| (0.0..=1.0).contains(x)));
        let fit = ergodicity_fit(&c, 200).unwrap();
        if !fit.exact_mixing {
            for (k, dk) in d.iter().enumerate().take(fit.max_k_used + 1) {
                prop_assert!(*dk <= fit.c * fit.sigma.powi(k as i32) * (1.0 + 1e-9) + 1e-15);
            }
        }
        for delta in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            prop_assert!(mixing_time(&c, delta).unwrap() <= fit.mixing_bound(delta).max(1));
        }
    }

    #[test]
    fn total_variation_is_a_metric(a in prop::collection::vec(0.01f64..1.0, 4), b in prop::collection::vec(0.01f64..1.0, 4)) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (a, b) = (norm(&a), norm(&b));
        let d = total_variation(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - total_variation(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn generated_mdps_validate(seed in any::<u64>(), s in 1usize..7, a in 1usize..4, frac in 0.0f64..1.0) {
        let branching = 1 + ((s - 1) as f64 * frac) as usize;
        if let Ok(mdp) = random_mdp(seed, s, a, branching, 0.9) {
            prop_assert!(validate_mdp(&mdp).is_ok());
            prop_assert_eq!(&mdp, &random_mdp(seed, s, a, branching, 0.9).unwrap());
            if branching == s {
                prop_assert!(mdp.transitions.iter().all(|p| p.iter().all(|x| *x > 0.0)));
            }
        }
    }
}
