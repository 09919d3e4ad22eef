use std::f64::consts::E;

use nalgebra::DMatrix;
use proptest::prelude::*;
use salab::bounds::{
    bound_q_constant, bound_rl_diminishing, bound_sa_constant, bound_sa_linear, bound_sa_polynomial, linear_case, optimal_n,
    polynomial_h_threshold, sa_constant_terms, sa_linear_terms, sa_polynomial_terms, sample_complexity_nstep, sample_complexity_q,
    sample_complexity_vtrace, write_bound_csv, BoundInputs, BoundOptions, BoundTerms, FamilyBound, LinearCase, Mixing,
};
use salab::chain::{FiniteChain, MixingProfile};
use salab::lyapunov::{phi_constants, PhiConstants};
use salab::mdp::{random_mdp, random_policy, Mdp, Policy, QFunction, ValueFunction};
use salab::operators::{nstep_beta, VTraceParams};
use salab::sa::StepsizeSchedule;
use salab::Norm;

fn inputs(t: usize) -> BoundInputs {
    let phi = phi_constants(Norm::L2, 0.5, 2).unwrap();
    BoundInputs::new(phi, 3.0, 1.0, Norm::L2, &[1.0, 0.0], &[0.5, 0.5], Mixing::Fixed(t)).unwrap()
}

#[test]
fn constant_bound_examples() {
    let phi = PhiConstants { phi1: 1.0, phi2: 0.5, phi3: 228.0 };
    let t = sa_constant_terms(&phi, 4.0, 1.0, 0.1, 3, 13);
    assert!((t.total - (4.0 * 0.95f64.powi(10) + 136.8)).abs() < 1e-9);
    let far = sa_constant_terms(&phi, 4.0, 1.0, 0.1, 3, 100_000);
    assert_eq!(far.bias, 0.0);
    assert_eq!(far.total, far.variance);
    let mut prev = f64::INFINITY;
    for k in 3..200 {
        let t = sa_constant_terms(&phi, 4.0, 1.0, 0.1, 3, k);
        assert!(t.bias < prev);
        assert_eq!(t.variance, far.variance);
        prev = t.bias;
    }
}

#[test]
fn generic_constant_bound_checks_its_preconditions() {
    let inp = inputs(5);
    // c1 = (||x0 - x*|| + ||x0|| + B/A)^2, c2 = (A ||x*|| + B)^2
    let c1 = (0.5f64.sqrt() + 1.0 + 1.0 / 3.0).powi(2);
    assert!((inp.c1 - c1).abs() < 1e-12);
    assert!((inp.c2 - (3.0 * 0.5f64.sqrt() + 1.0).powi(2)).abs() < 1e-12);
    let alpha = inp.budget() / 5.0;
    let at_t = bound_sa_constant(&inp, alpha, 5).unwrap();
    assert!((at_t.bias - inp.phi.phi1 * inp.c1).abs() < 1e-12);
    assert!(bound_sa_constant(&inp, alpha, 4).is_err());
    let err = bound_sa_constant(&inp, alpha * 1.01, 10).unwrap_err();
    assert!(err.is_assumption(), "{err}");
}

#[test]
fn linear_stepsize_cases() {
    let phi = PhiConstants { phi1: 1.0, phi2: 0.5, phi3: 228.0 };
    assert_eq!(linear_case(0.5, 1.0), LinearCase::Slow);
    assert_eq!(linear_case(0.5, 2.0), LinearCase::Critical);
    assert_eq!(linear_case(0.5, 8.0), LinearCase::Fast);
    let crit = sa_linear_terms(&phi, 2.0, 1.0, 2.0, 10.0, 5, 3, 90);
    assert!((crit.variance - 8.0 * 4.0 * 228.0 * 3.0 * 100f64.ln() / 100.0).abs() < 1e-9);
    assert!((crit.bias - 2.0 * 15.0 / 100.0).abs() < 1e-12);

    // fast case: variance ~ t_k / (k + h), with t_k growing slowly
    let chain = FiniteChain::from_dense(&DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8])).unwrap();
    let profile = MixingProfile::new(&chain).unwrap();
    let (alpha, h) = (8.0, 1e4);
    for k in [1_000usize, 10_000, 100_000] {
        let t1 = profile.mixing_time(alpha / (k as f64 + h));
        let t2 = profile.mixing_time(alpha / (2.0 * k as f64 + h));
        let a = sa_linear_terms(&phi, 1.0, 1.0, alpha, h, 0, t1, k);
        let b = sa_linear_terms(&phi, 1.0, 1.0, alpha, h, 0, t2, 2 * k + h as usize);
        let ratio = b.variance / a.variance;
        assert!((0.45..=0.6).contains(&ratio), "k = {k}: {ratio}");
    }
}

#[test]
fn linear_bound_requires_warm_up_budget() {
    let inp = inputs(4);
    let alpha = 1.0;
    // window sums are about 4 alpha / (k + h)
    let h = 8.0 / inp.budget();
    let k_first = 4;
    let ok = bound_sa_linear(&inp, alpha, h, 1000).unwrap();
    let expect = sa_linear_terms(&inp.phi, inp.c1, inp.c2, alpha, h, k_first, 4, 1000);
    assert_eq!(ok, expect);
    assert!(bound_sa_linear(&inp, alpha, h, 2).is_err());
    assert!(bound_sa_linear(&inp, alpha, 1.0, 1000).unwrap_err().is_assumption());
}

#[test]
fn polynomial_bound_examples() {
    let phi = PhiConstants { phi1: 2.0, phi2: 0.5, phi3: 228.0 };
    let at_k = sa_polynomial_terms(&phi, 3.0, 1.0, 1.0, 100.0, 0.5, 7, 2, 7);
    assert!((at_k.bias - 6.0).abs() < 1e-12);
    let a = sa_polynomial_terms(&phi, 3.0, 1.0, 1.0, 100.0, 0.5, 0, 2, 900);
    let b = sa_polynomial_terms(&phi, 3.0, 1.0, 1.0, 100.0, 0.5, 0, 2, 3900);
    assert!((b.variance / a.variance - 0.5).abs() < 1e-12);

    let inp = inputs(3);
    let h_min = polynomial_h_threshold(inp.phi.phi2, 1.0, 0.5);
    assert!(bound_sa_polynomial(&inp, 1.0, h_min * 0.5, 0.5, 10_000).unwrap_err().is_assumption());
    let h = (3.0 / inp.budget()).powi(2).max(h_min) * 4.0;
    let t = bound_sa_polynomial(&inp, 1.0, h, 0.5, 100).unwrap();
    assert!(t.bias > 0.0 && t.variance > 0.0);
}

#[test]
fn q_bound_on_a_zero_reward_mdp() {
    let mut mdp = random_mdp(1, 3, 2, 3, 0.8).unwrap();
    mdp.rewards = DMatrix::zeros(3, 2);
    let behavior = Policy::uniform(3, 2);
    let fb = FamilyBound::q_learning(&mdp, &behavior, &QFunction::zeros(3, 2), &BoundOptions::default()).unwrap();
    assert_eq!(fb.c1, 3.0);
    let alpha = fb.max_constant_stepsize().unwrap();
    let k = fb.first_k(alpha);
    let t = fb.mixing.mixing_time(alpha) as f64;
    let gap = 1.0 - fb.beta;
    let variance = 912.0 * E * 6f64.ln() / (gap * gap) * alpha * t;
    let at = bound_q_constant(&mdp, &behavior, &QFunction::zeros(3, 2), alpha, k).unwrap();
    assert_eq!(at.bias, 3.0);
    assert!((at.variance - variance).abs() <= 1e-12 * variance);
}

#[test]
fn family_thresholds_are_consistent() {
    let mdp = random_mdp(2, 4, 2, 3, 0.7).unwrap();
    let target = random_policy(3, 4, 2);
    let v0 = ValueFunction { values: vec![0.0; 4] };
    let opts = BoundOptions::default();
    let vparams = VTraceParams { n: 2, c_bar: 1.0, rho_bar: 1.2, target: target.clone(), behavior: Policy::uniform(4, 2) };
    let bounds = [
        FamilyBound::q_learning(&mdp, &Policy::uniform(4, 2), &QFunction::zeros(4, 2), &opts).unwrap(),
        FamilyBound::vtrace(&mdp, &vparams, &v0, &opts).unwrap(),
        FamilyBound::nstep(&mdp, &target, 3, &v0, &opts).unwrap(),
    ];
    for fb in &bounds {
        let alpha = fb.max_constant_stepsize().unwrap();
        assert!(fb.admissible(alpha), "{:?}", fb.family);
        assert!(!fb.admissible(alpha * (1.0 + 1e-9)), "{:?}", fb.family);
        let err = fb.constant(alpha * 1.5, 10 * fb.first_k(alpha)).unwrap_err();
        assert!(err.is_assumption());
        let ks: Vec<usize> = (0..20).map(|i| fb.first_k(alpha) + i * 1000).collect();
        let curve = fb.constant_curve(alpha, &ks).unwrap();
        assert!(curve.windows(2).all(|w| w[1].bias < w[0].bias && w[1].variance == w[0].variance));
        assert!(curve.iter().all(|t| t.total == t.bias + t.variance));
    }
}

#[test]
fn on_policy_vtrace_and_nstep_share_beta() {
    let mdp = random_mdp(4, 4, 2, 3, 0.8).unwrap();
    let pol = random_policy(5, 4, 2);
    let v0 = ValueFunction { values: vec![0.0; 4] };
    let params = VTraceParams { n: 3, c_bar: 1.0, rho_bar: 1.0, target: pol.clone(), behavior: pol.clone() };
    let v = FamilyBound::vtrace(&mdp, &params, &v0, &BoundOptions::default()).unwrap();
    let n = FamilyBound::nstep(&mdp, &pol, 3, &v0, &BoundOptions::default()).unwrap();
    assert!((v.beta - n.beta).abs() < 1e-12);
    assert!((n.beta - nstep_beta(&mdp, &pol, 3).unwrap().0).abs() < 1e-15);
}

#[test]
fn worst_case_norm_is_looser() {
    let mdp = random_mdp(6, 4, 2, 3, 0.7).unwrap();
    let pol = random_policy(7, 4, 2);
    let v0 = ValueFunction { values: vec![0.0; 4] };
    let tight = FamilyBound::nstep(&mdp, &pol, 2, &v0, &BoundOptions::default()).unwrap();
    let loose = FamilyBound::nstep(&mdp, &pol, 2, &v0, &BoundOptions { norm_upper_bound: true, ..BoundOptions::default() }).unwrap();
    let alpha = tight.max_constant_stepsize().unwrap();
    let k = tight.first_k(alpha);
    assert!(loose.constant(alpha, k).unwrap().variance >= tight.constant(alpha, k).unwrap().variance);
}

#[test]
fn q_diminishing_linear_decays_quadratically() {
    let mdp = random_mdp(8, 3, 2, 3, 0.6).unwrap();
    let fb = FamilyBound::q_learning(&mdp, &Policy::uniform(3, 2), &QFunction::zeros(3, 2), &BoundOptions::default()).unwrap();
    let alpha = 4.0 / (1.0 - fb.beta);
    let h = 200.0 * alpha / fb.threshold();
    let schedule = StepsizeSchedule::Linear { alpha, h };
    let ks = [100usize, 1000, 10_000];
    let curve = fb.diminishing_curve(&schedule, &ks).unwrap();
    let r = curve[1].bias / curve[0].bias;
    let expect = ((100.0 + h) / (1000.0 + h)).powi(2);
    assert!((r - expect).abs() <= 1e-12, "{r} vs {expect}");
    assert_eq!(bound_rl_diminishing(&fb, &schedule, 1000).unwrap(), curve[1]);

    let off = StepsizeSchedule::Linear { alpha: 3.0 / (1.0 - fb.beta), h };
    assert!(fb.diminishing_curve(&off, &ks).is_err());
    assert!(fb.diminishing_curve(&StepsizeSchedule::Linear { alpha, h: 10.0 }, &ks).unwrap_err().is_assumption());
}

#[test]
fn td_lambda_has_no_diminishing_bound() {
    let mdp = random_mdp(9, 3, 2, 3, 0.6).unwrap();
    let pol = Policy::uniform(3, 2);
    let fb = FamilyBound::td_lambda(&mdp, &pol, 0.5, 0.01, &ValueFunction { values: vec![0.0; 3] }, &BoundOptions::default()).unwrap();
    assert_eq!(fb.tau(), Some(3));
    assert!(fb.diminishing_curve(&StepsizeSchedule::Linear { alpha: 1.0, h: 1e9 }, &[10]).is_err());
}

#[test]
fn sample_complexity_scalings() {
    let a = sample_complexity_q(0.1, 0.9, 0.2).unwrap().value;
    let b = sample_complexity_q(0.05, 0.9, 0.2).unwrap().value;
    let ratio = b / a;
    assert!(ratio > 4.0 && (ratio - 4.0 * (20f64.ln() / 10f64.ln()).powi(2)).abs() < 1e-9);
    assert!((sample_complexity_q(0.1, 0.9, 0.1).unwrap().value / a - 8.0).abs() < 1e-9);
    assert!((sample_complexity_q(0.1, 0.99, 0.2).unwrap().value / a - 1e5).abs() < 1e-4);
    let v1 = sample_complexity_vtrace(0.1, 0.9, 3, 1.0, 1.0, 0.5, 0.2).unwrap();
    let v2 = sample_complexity_vtrace(0.1, 0.9, 3, 1.0, 2.0, 0.5, 0.2).unwrap();
    assert!((v2.value / v1.value - 4.0).abs() < 1e-9);
    assert!(!v1.geometric_trace_growth);
    assert!(sample_complexity_vtrace(0.1, 0.9, 3, 1.5, 2.0, 0.5, 0.2).unwrap().geometric_trace_growth);
    assert!(sample_complexity_nstep(0.1, 0.9, 4, 0.2, 5).unwrap().value > 0.0);
    assert!(sample_complexity_q(0.0, 0.9, 0.2).is_err());
}

#[test]
fn optimal_n_examples() {
    let at = |gamma: f64| optimal_n(gamma).unwrap();
    assert_eq!(at(0.3).argmin, 1);
    assert_eq!(at(1e-6).argmin, 1);
    assert_eq!((at(0.9).argmin, at(0.9).estimate), (12, 9));
    assert!(optimal_n(1.0).is_err());
}

#[test]
fn bound_csv_layout() {
    let mut out = Vec::new();
    write_bound_csv(&mut out, &[1, 2], &[BoundTerms::new(1.0, 0.5), BoundTerms::new(0.25, 0.5)]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "k,bias,variance,total\n1,1e0,5e-1,1.5e0\n2,2.5e-1,5e-1,7.5e-1\n");
}

#[test]
fn single_state_mdp_bounds_exist() {
    let mdp = Mdp::new(vec![DMatrix::from_element(1, 1, 1.0); 2], DMatrix::from_row_slice(1, 2, &[0.2, 0.9]), 0.5).unwrap();
    let fb = FamilyBound::q_learning(&mdp, &Policy::uniform(1, 2), &QFunction::zeros(1, 2), &BoundOptions::default()).unwrap();
    assert!(fb.max_constant_stepsize().unwrap() > 0.0);
}

proptest! {
    #[test]
    fn optimal_n_is_a_true_minimum(gamma in 0.01f64..0.995) {
        let n = optimal_n(gamma).unwrap().argmin;
        let f = |n: usize| n as f64 / (1.0 - gamma.powi(n as i32)).powi(2);
        for m in 1..=500 {
            prop_assert!(f(n) <= f(m));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn largest_stepsize_is_admissible(seed in 0u64..10_000, states in 2usize..6, gamma in 0.3f64..0.95, n in 1usize..5) {
        let mdp = random_mdp(seed, states, 2, states, gamma).unwrap();
        let pol = random_policy(seed + 1, states, 2);
        let v0 = ValueFunction { values: vec![0.0; states] };
        let opts = BoundOptions::default();
        let fb = [
            FamilyBound::q_learning(&mdp, &Policy::uniform(states, 2), &QFunction::zeros(states, 2), &opts).unwrap(),
            FamilyBound::nstep(&mdp, &pol, n, &v0, &opts).unwrap(),
        ];
        for b in &fb {
            let alpha = b.max_constant_stepsize().unwrap();
            prop_assert!(b.admissible(alpha));
            prop_assert!(b.constant(alpha, b.first_k(alpha)).is_ok());
        }
    }
}
