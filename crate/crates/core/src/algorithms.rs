//! Direct trajectory-driven implementations of Q-learning, V-trace, n-step
//! TD and TD(lambda). They share no code with the operator layer beyond the
//! trajectory stream, which makes them useful for cross-checking it.

use crate::error::{Assumption, Error, Result};
use crate::mdp::{row_max, Mdp, Policy, QFunction, Start, TrajectoryStream, ValueFunction};
use crate::norm::Norm;
use crate::operators::VTraceParams;
use crate::sa::{validate_checkpoints, StepsizeSchedule};
use std::collections::VecDeque;
use std::io::Write;

const OVERFLOW: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoRunLog {
    pub checkpoints: Vec<usize>,
    pub iterates: Vec<Vec<f64>>,
    pub seed: u64,
    pub schedule: StepsizeSchedule,
    /// TD(lambda) only: the trace `z_{k-1}` that produced `V_k`.
    pub traces: Option<Vec<Vec<f64>>>,
}

impl AlgoRunLog {
    /// Long format `k,coord_index,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        crate::sa::write_iterates_csv(&mut w, &self.checkpoints, &self.iterates)
    }

    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

struct Recorder<'a> {
    checkpoints: &'a [usize],
    next: usize,
    iterates: Vec<Vec<f64>>,
}

impl<'a> Recorder<'a> {
    fn new(checkpoints: &'a [usize]) -> Self {
        Recorder { checkpoints, next: 0, iterates: Vec::with_capacity(checkpoints.len()) }
    }

    #[inline]
    fn maybe(&mut self, k: usize, x: &[f64]) -> bool {
        if self.next < self.checkpoints.len() && self.checkpoints[self.next] == k {
            self.iterates.push(x.to_vec());
            self.next += 1;
            true
        } else {
            false
        }
    }
}

#[inline]
fn guard(k: usize, v: f64) -> Result<()> {
    if !(v.abs() <= OVERFLOW) {
        return Err(Error::Overflow { iteration: k + 1, norm: v.abs() });
    }
    Ok(())
}

fn prepare(schedule: &StepsizeSchedule, x0_len: usize, dim: usize, horizon: usize, checkpoints: &[usize]) -> Result<()> {
    schedule.validate()?;
    validate_checkpoints(checkpoints, horizon)?;
    if x0_len != dim {
        return Err(Error::dim(format!("initial iterate has length {x0_len}, expected {dim}")));
    }
    Ok(())
}

/// `Q(S_k, A_k) += alpha_k (R + gamma max_a Q(S_{k+1}, a) - Q(S_k, A_k))`.
#[allow(clippy::too_many_arguments)]
pub fn run_q_learning(
    mdp: &Mdp,
    behavior: &Policy,
    schedule: &StepsizeSchedule,
    q0: &QFunction,
    horizon: usize,
    checkpoints: &[usize],
    seed: u64,
    start: &Start,
) -> Result<AlgoRunLog> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    prepare(schedule, q0.values.len(), ns * na, horizon, checkpoints)?;
    behavior.check_shape(mdp)?;
    if behavior.min_prob() <= 0.0 {
        return Err(Error::assumption(Assumption::FullSupportBehavior, "behaviour policy must give every action positive probability"));
    }
    let mut stream = TrajectoryStream::new(mdp, behavior, start, seed)?;
    let mut q = q0.values.clone();
    let mut rec = Recorder::new(checkpoints);
    let gamma = mdp.gamma;
    for k in 0..horizon {
        rec.maybe(k, &q);
        let st = stream.next_step();
        let i = st.state * na + st.action;
        let target = mdp.r(st.state, st.action) + gamma * row_max(&q[st.next_state * na..(st.next_state + 1) * na]) - q[i];
        q[i] += schedule.at(k) * target;
        guard(k, q[i])?;
    }
    rec.maybe(horizon, &q);
    Ok(AlgoRunLog { checkpoints: checkpoints.to_vec(), iterates: rec.iterates, seed, schedule: *schedule, traces: None })
}

/// Streams `n` steps of lookahead and applies `update(V, window)` to `V(S_k)`.
#[allow(clippy::too_many_arguments)]
fn run_windowed<F>(
    mdp: &Mdp,
    pol: &Policy,
    n: usize,
    schedule: &StepsizeSchedule,
    v0: &ValueFunction,
    horizon: usize,
    checkpoints: &[usize],
    seed: u64,
    start: &Start,
    increment: F,
) -> Result<AlgoRunLog>
where
    F: Fn(&[f64], &VecDeque<(usize, usize, usize)>) -> f64,
{
    prepare(schedule, v0.values.len(), mdp.num_states(), horizon, checkpoints)?;
    if n == 0 {
        return Err(Error::arg("n must be at least 1"));
    }
    let mut stream = TrajectoryStream::new(mdp, pol, start, seed)?;
    let mut buf: VecDeque<(usize, usize, usize)> = VecDeque::with_capacity(n + 1);
    for _ in 0..n {
        let st = stream.next_step();
        buf.push_back((st.state, st.action, st.next_state));
    }
    let mut v = v0.values.clone();
    let mut rec = Recorder::new(checkpoints);
    for k in 0..horizon {
        rec.maybe(k, &v);
        if k > 0 {
            buf.pop_front();
            let st = stream.next_step();
            buf.push_back((st.state, st.action, st.next_state));
        }
        let s0 = buf[0].0;
        let inc = increment(&v, &buf);
        v[s0] += schedule.at(k) * inc;
        guard(k, v[s0])?;
    }
    rec.maybe(horizon, &v);
    Ok(AlgoRunLog { checkpoints: checkpoints.to_vec(), iterates: rec.iterates, seed, schedule: *schedule, traces: None })
}

/// V-trace with truncated importance ratios `c = min(c_bar, pi/pi_b)` and
/// `rho = min(rho_bar, pi/pi_b)` along a behaviour trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_vtrace(
    mdp: &Mdp,
    params: &VTraceParams,
    schedule: &StepsizeSchedule,
    v0: &ValueFunction,
    horizon: usize,
    checkpoints: &[usize],
    seed: u64,
    start: &Start,
) -> Result<AlgoRunLog> {
    params.validate(mdp)?;
    let na = mdp.num_actions();
    let ratio = |level: f64| -> Vec<f64> {
        (0..mdp.num_states() * na)
            .map(|i| {
                let pb = params.behavior.prob(i / na, i % na);
                if pb > 0.0 {
                    level.min(params.target.prob(i / na, i % na) / pb)
                } else {
                    f64::NAN
                }
            })
            .collect()
    };
    let (c, rho) = (ratio(params.c_bar), ratio(params.rho_bar));
    let gamma = mdp.gamma;
    run_windowed(mdp, &params.behavior, params.n, schedule, v0, horizon, checkpoints, seed, start, |v, buf| {
        let mut disc = 1.0;
        let mut trace = 1.0;
        let mut acc = 0.0;
        for &(s, a, t) in buf.iter() {
            let td = mdp.r(s, a) + gamma * v[t] - v[s];
            acc += disc * trace * rho[s * na + a] * td;
            trace *= c[s * na + a];
            disc *= gamma;
        }
        acc
    })
}

/// On-policy n-step TD. The n-step temporal difference is accumulated as
/// `sum_i gamma^i (R_i + gamma V(S_{i+1}) - V(S_i))`.
#[allow(clippy::too_many_arguments)]
pub fn run_nstep_td(
    mdp: &Mdp,
    target: &Policy,
    n: usize,
    schedule: &StepsizeSchedule,
    v0: &ValueFunction,
    horizon: usize,
    checkpoints: &[usize],
    seed: u64,
    start: &Start,
) -> Result<AlgoRunLog> {
    let gamma = mdp.gamma;
    run_windowed(mdp, target, n, schedule, v0, horizon, checkpoints, seed, start, |v, buf| {
        let mut disc = 1.0;
        let mut acc = 0.0;
        for &(s, a, t) in buf.iter() {
            let td = mdp.r(s, a) + gamma * v[t] - v[s];
            acc += disc * td;
            disc *= gamma;
        }
        acc
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::arg(format!("lambda = {lambda} must lie in [0, 1); the analysis needs gamma * lambda < 1 with lambda < 1")));
    }
    Ok(())
}

/// TD(lambda) with accumulating traces `z_k = gamma lambda z_{k-1} + e_{S_k}`
/// and constant stepsize; `lambda = 0` is plain TD(0).
#[allow(clippy::too_many_arguments)]
pub fn run_td_lambda(
    mdp: &Mdp,
    target: &Policy,
    lambda: f64,
    alpha: f64,
    v0: &ValueFunction,
    horizon: usize,
    checkpoints: &[usize],
    seed: u64,
    start: &Start,
) -> Result<AlgoRunLog> {
    check_lambda(lambda)?;
    let schedule = StepsizeSchedule::Constant { alpha };
    let ns = mdp.num_states();
    prepare(&schedule, v0.values.len(), ns, horizon, checkpoints)?;
    let mut stream = TrajectoryStream::new(mdp, target, start, seed)?;
    let gl = mdp.gamma * lambda;
    let mut v = v0.values.clone();
    let mut z = vec![0.0; ns];
    let mut rec = Recorder::new(checkpoints);
    let mut traces = Vec::with_capacity(checkpoints.len());
    for k in 0..horizon {
        if rec.maybe(k, &v) {
            traces.push(z.clone());
        }
        let st = stream.next_step();
        for zi in z.iter_mut() {
            *zi *= gl;
        }
        z[st.state] += 1.0;
        let g = mdp.r(st.state, st.action) + mdp.gamma * v[st.next_state] - v[st.state];
        for i in 0..ns {
            v[i] += alpha * z[i] * g;
        }
        guard(k, Norm::LInf.of(&v))?;
    }
    if rec.maybe(horizon, &v) {
        traces.push(z);
    }
    Ok(AlgoRunLog { checkpoints: checkpoints.to_vec(), iterates: rec.iterates, seed, schedule, traces: Some(traces) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationAudit {
    pub steps: usize,
    /// Largest `residual / (alpha * bound)` seen.
    pub max_ratio: f64,
    pub violations: usize,
}

/// Runs TD(lambda) and, at every step, compares the update with the
/// truncated-trace update on the window of the last `tau + 1` states. The
/// residual must stay below `alpha (gamma lambda)^(tau+1) / (1 - gamma lambda) (1 + 2 ||V_k||_2)`.
#[allow(clippy::too_many_arguments)]
pub fn td_lambda_truncation_audit(
    mdp: &Mdp,
    target: &Policy,
    lambda: f64,
    alpha: f64,
    tau: usize,
    v0: &ValueFunction,
    horizon: usize,
    seed: u64,
    start: &Start,
) -> Result<TruncationAudit> {
    check_lambda(lambda)?;
    let ns = mdp.num_states();
    let mut stream = TrajectoryStream::new(mdp, target, start, seed)?;
    let gl = mdp.gamma * lambda;
    let mut v = v0.values.clone();
    let mut z = vec![0.0; ns];
    let mut recent: VecDeque<usize> = VecDeque::with_capacity(tau + 1);
    let mut zt = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut trunc = vec![0.0; ns];
    let mut audit = TruncationAudit { steps: horizon, max_ratio: 0.0, violations: 0 };
    let tail = gl.powi(tau as i32 + 1) / (1.0 - gl);
    for k in 0..horizon {
        let st = stream.next_step();
        for zi in z.iter_mut() {
            *zi *= gl;
        }
        z[st.state] += 1.0;
        if recent.len() == tau + 1 {
            recent.pop_front();
        }
        recent.push_back(st.state);
        zt.iter_mut().for_each(|x| *x = 0.0);
        let mut w = 1.0;
        for &s in recent.iter().rev() {
            zt[s] += w;
            w *= gl;
        }
        let g = mdp.r(st.state, st.action) + mdp.gamma * v[st.next_state] - v[st.state];
        for i in 0..ns {
            next[i] = v[i] + alpha * z[i] * g;
            trunc[i] = v[i] + alpha * zt[i] * g;
        }
        let residual = Norm::L2.dist(&next, &trunc);
        let allowed = alpha * tail * (1.0 + 2.0 * Norm::L2.of(&v));
        let ratio = residual / allowed;
        audit.max_ratio = audit.max_ratio.max(ratio);
        if residual > allowed {
            audit.violations += 1;
        }
        std::mem::swap(&mut v, &mut next);
        guard(k, Norm::LInf.of(&v))?;
    }
    Ok(audit)
}
