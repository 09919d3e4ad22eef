//! Config-driven experiments. Each run writes CSV files and SVG plots to
//! the configured output directory and returns a small summary.

mod config;
mod plot;
mod stats;

pub use config::{
    load_config, parse_config, validate_config, AlgorithmSpec, CheckpointPolicy, ExperimentConfig, ExperimentKind, InitSpec, MdpSource,
    PolicySpec, StartSpec, StepsizeSpec, KNOWN_KEYS,
};
pub use plot::{emit_plot, render_svg, Curve, PlotOptions};
pub use stats::{ranks, spearman};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::algorithms::{run_nstep_td, run_q_learning, run_td_lambda, run_vtrace};
use crate::bounds::{max_td_lambda_stepsize, optimal_n, write_bound_csv, BoundOptions, FamilyBound};
use crate::chain::{stationary_distribution, DEFAULT_MAX_LIFTED_STATES};
use crate::error::{Assumption, Error, Result};
use crate::mdp::{parse_mdp, random_mdp, random_policy, solve_optimal_q, solve_value_function, Mdp, Policy, QFunction, Start, ValueFunction};
use crate::norm::Norm;
use crate::operators::{
    contraction_ratio, empirical_expected_on, vtrace_fixed_point, AsyncOperator, Family, NStepTdOperator, QLearningOperator, TdLambdaOperator,
    TdLambdaParams, VTraceOperator, VTraceParams,
};
use crate::par::Execution;
use crate::rng::{derive_seed, fnv1a};
use crate::sa::{geometric_checkpoints, linear_checkpoints, monte_carlo_mse, validate_checkpoints, MseCurve, StepsizeSchedule};

#[derive(Debug, Clone)]
pub struct RunResult {
    pub experiment: ExperimentKind,
    pub artifacts: Vec<PathBuf>,
    /// Named summary statistics in the order they were produced.
    pub summary: Vec<(String, f64)>,
    /// Failed checks: bound breaches, contraction failures or oracle
    /// coordinates beyond three standard errors.
    pub violations: usize,
    pub wall_clock: Duration,
    pub config_hash: u64,
}

impl RunResult {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

/// Hash of the parsed key/value pairs, independent of comments, blank lines
/// and key order in the file.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let mut text = String::new();
    for (k, v) in &cfg.entries {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    fnv1a(text.as_bytes())
}

pub fn execution_for(cfg: &ExperimentConfig) -> Execution {
    match cfg.threads {
        None | Some(0) => Execution::from_env(),
        Some(1) => Execution::Sequential,
        Some(n) => Execution::ParallelWith(n),
    }
}

/// Default TD(lambda) stepsize used to fix the truncation level when an
/// experiment has no constant stepsize of its own.
const DEFAULT_TRUNCATION_ALPHA: f64 = 0.05;

#[derive(Debug, Clone)]
struct Instance {
    mdp: Mdp,
    target: Policy,
    behavior: Policy,
}

fn make_policy(spec: PolicySpec, seed_index: Option<usize>, mdp: &Mdp) -> Policy {
    match spec {
        PolicySpec::Random(s) => {
            let seed = seed_index.map_or(s, |i| derive_seed(s, "instance", i as u64));
            random_policy(seed, mdp.num_states(), mdp.num_actions())
        }
        _ => Policy::uniform(mdp.num_states(), mdp.num_actions()),
    }
}

/// `index` selects one of several seeded instances; `None` is the instance
/// the config describes directly.
fn build_instance(cfg: &ExperimentConfig, index: Option<usize>) -> Result<Instance> {
    let mdp = match cfg.mdp.as_ref().ok_or_else(|| Error::Config("no MDP configured".into()))? {
        MdpSource::Random { seed, states, actions, branching, gamma } => {
            let seed = index.map_or(*seed, |i| derive_seed(*seed, "instance", i as u64));
            random_mdp(seed, *states, *actions, *branching, *gamma)?
        }
        MdpSource::File(path) => parse_mdp(&std::fs::read_to_string(path)?)?,
    };
    let target = make_policy(cfg.target, index, &mdp);
    let behavior = match cfg.behavior {
        PolicySpec::Target => target.clone(),
        spec => make_policy(spec, index.map(|i| i + 1_000_000), &mdp),
    };
    Ok(Instance { mdp, target, behavior })
}

fn instance_count(cfg: &ExperimentConfig) -> usize {
    match cfg.mdp {
        Some(MdpSource::File(_)) => 1,
        _ => cfg.instances,
    }
}

fn vtrace_params(inst: &Instance, alg: &AlgorithmSpec) -> VTraceParams {
    VTraceParams { n: alg.n, c_bar: alg.c_bar, rho_bar: alg.rho_bar, target: inst.target.clone(), behavior: inst.behavior.clone() }
}

/// One algorithm on one instance: the fixed point it converges to, the
/// norm the error is measured in, and the initial iterate.
struct Prepared<'a> {
    inst: &'a Instance,
    alg: AlgorithmSpec,
    vparams: VTraceParams,
    x_star: Vec<f64>,
    norm: Norm,
    x0: Vec<f64>,
    start: Start,
}

impl<'a> Prepared<'a> {
    fn new(inst: &'a Instance, alg: AlgorithmSpec, init: InitSpec, start: &StartSpec) -> Result<Self> {
        let mdp = &inst.mdp;
        let vparams = vtrace_params(inst, &alg);
        let (x_star, norm, sampling_policy) = match alg.family {
            Family::QLearning => (solve_optimal_q(mdp)?.0.values, Norm::LInf, &inst.behavior),
            Family::VTrace => (vtrace_fixed_point(mdp, &vparams)?.values, Norm::LInf, &inst.behavior),
            Family::NStepTd | Family::TdLambda => (solve_value_function(mdp, &inst.target)?.values, Norm::L2, &inst.target),
        };
        let x0 = match init {
            InitSpec::Zeros => vec![0.0; x_star.len()],
            InitSpec::FixedPoint => x_star.clone(),
            InitSpec::Constant(c) => vec![c; x_star.len()],
        };
        let start = match start {
            StartSpec::Stationary => Start::Stationary.resolve(mdp, sampling_policy)?,
            StartSpec::State(s) => Start::State(*s),
        };
        Ok(Prepared { inst, alg, vparams, x_star, norm, x0, start })
    }

    fn bound(&self, alpha: f64, opts: &BoundOptions) -> Result<FamilyBound> {
        let mdp = &self.inst.mdp;
        let v0 = ValueFunction { values: self.x0.clone() };
        match self.alg.family {
            Family::QLearning => {
                let q0 = QFunction::from_vec(mdp.num_states(), mdp.num_actions(), self.x0.clone())?;
                FamilyBound::q_learning(mdp, &self.inst.behavior, &q0, opts)
            }
            Family::VTrace => FamilyBound::vtrace(mdp, &self.vparams, &v0, opts),
            Family::NStepTd => FamilyBound::nstep(mdp, &self.inst.target, self.alg.n, &v0, opts),
            Family::TdLambda => FamilyBound::td_lambda(mdp, &self.inst.target, self.alg.lambda, alpha, &v0, opts),
        }
    }

    /// Largest admissible constant stepsize times `scale`.
    fn admissible_stepsize(&self, scale: f64, opts: &BoundOptions) -> Result<f64> {
        let alpha = if self.alg.family == Family::TdLambda {
            let v0 = ValueFunction { values: self.x0.clone() };
            max_td_lambda_stepsize(&self.inst.mdp, &self.inst.target, self.alg.lambda, &v0, opts)?
        } else {
            self.bound(DEFAULT_TRUNCATION_ALPHA, opts)?.max_constant_stepsize()?
        };
        let alpha = alpha * scale;
        if self.alg.family == Family::TdLambda && !self.bound(alpha, opts)?.admissible(alpha) {
            return Err(Error::assumption(
                Assumption::StepsizeBudget,
                format!("scaled TD(lambda) stepsize {alpha:e} is not admissible at its own truncation level"),
            ));
        }
        Ok(alpha)
    }

    /// Squared errors `||x_k - x*||^2` at the checkpoints for one run.
    fn squared_errors(&self, schedule: &StepsizeSchedule, horizon: usize, checkpoints: &[usize], seed: u64) -> Result<Vec<f64>> {
        let mdp = &self.inst.mdp;
        let v0 = ValueFunction { values: self.x0.clone() };
        let log = match self.alg.family {
            Family::QLearning => {
                let q0 = QFunction::from_vec(mdp.num_states(), mdp.num_actions(), self.x0.clone())?;
                run_q_learning(mdp, &self.inst.behavior, schedule, &q0, horizon, checkpoints, seed, &self.start)?
            }
            Family::VTrace => run_vtrace(mdp, &self.vparams, schedule, &v0, horizon, checkpoints, seed, &self.start)?,
            Family::NStepTd => run_nstep_td(mdp, &self.inst.target, self.alg.n, schedule, &v0, horizon, checkpoints, seed, &self.start)?,
            Family::TdLambda => {
                let StepsizeSchedule::Constant { alpha } = *schedule else {
                    return Err(Error::Config("TD(lambda) runs need a constant stepsize".into()));
                };
                run_td_lambda(mdp, &self.inst.target, self.alg.lambda, alpha, &v0, horizon, checkpoints, seed, &self.start)?
            }
        };
        Ok(log.iterates.iter().map(|x| self.norm.sq_dist(x, &self.x_star)).collect())
    }

    fn mse(&self, schedule: &StepsizeSchedule, horizon: usize, checkpoints: &[usize], cfg: &ExperimentConfig) -> Result<MseCurve> {
        monte_carlo_mse(checkpoints, cfg.runs, execution_for(cfg), |i| {
            self.squared_errors(schedule, horizon, checkpoints, derive_seed(cfg.base_seed, "run", i as u64))
        })
    }
}

fn checkpoints_for(cfg: &ExperimentConfig, horizon: usize) -> Result<Vec<usize>> {
    let ks = match &cfg.checkpoints {
        CheckpointPolicy::Geometric => geometric_checkpoints(horizon),
        CheckpointPolicy::Linear(n) => linear_checkpoints(horizon, *n),
        CheckpointPolicy::List(ks) => ks.iter().copied().filter(|k| *k <= horizon).collect(),
    };
    validate_checkpoints(&ks, horizon).map_err(|e| Error::Config(format!("checkpoints: {e}")))?;
    if ks.is_empty() {
        return Err(Error::Config(format!("no checkpoints within horizon {horizon}")));
    }
    Ok(ks)
}

fn resolve_stepsize(cfg: &ExperimentConfig, prep: &Prepared) -> Result<StepsizeSchedule> {
    match cfg.stepsize {
        Some(StepsizeSpec::Fixed(s)) => Ok(s),
        Some(StepsizeSpec::Admissible { scale }) => Ok(StepsizeSchedule::Constant { alpha: prep.admissible_stepsize(scale, &BoundOptions::default())? }),
        None => Err(Error::Config(format!("{} needs a stepsize block", cfg.experiment.name()))),
    }
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.artifacts.push(path);
        Ok(())
    }

    fn plot(&mut self, name: &str, curves: &[Curve], opts: &PlotOptions) -> Result<()> {
        let path = self.dir.join(name);
        emit_plot(curves, &path, opts)?;
        self.artifacts.push(path);
        Ok(())
    }
}

fn mse_points(c: &MseCurve) -> Vec<(f64, f64)> {
    c.checkpoints.iter().zip(&c.mean).map(|(k, m)| (*k as f64, *m)).collect()
}

struct Report {
    summary: Vec<(String, f64)>,
    violations: usize,
}

impl Report {
    fn new() -> Self {
        Report { summary: Vec::new(), violations: 0 }
    }

    fn put(&mut self, key: impl Into<String>, value: f64) {
        self.summary.push((key.into(), value));
    }
}

/// Runs the configured experiment. Outputs depend only on the config, so
/// re-running it reproduces every CSV byte for byte.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    validate_config(cfg)?;
    let started = Instant::now();
    let mut out = Output::new(&cfg.output_dir)?;
    let mut report = Report::new();
    match cfg.experiment {
        ExperimentKind::MseCurve => mse_curve_experiment(cfg, &mut out, &mut report)?,
        ExperimentKind::BiasVarianceN | ExperimentKind::BiasVarianceLambda => sweep_experiment(cfg, &mut out, &mut report)?,
        ExperimentKind::ContractionCheck => contraction_experiment(cfg, &mut out, &mut report)?,
        ExperimentKind::OperatorEquivalence => equivalence_experiment(cfg, &mut out, &mut report)?,
        ExperimentKind::BoundEnvelope => envelope_experiment(cfg, &mut out, &mut report)?,
        ExperimentKind::OptimalNScan => optimal_n_experiment(cfg, &mut out, &mut report)?,
    }
    let hash = config_hash(cfg);
    report.put("violations", report.violations as f64);
    let summary = report.summary;
    out.write("summary.csv", |w| {
        writeln!(w, "key,value")?;
        writeln!(w, "config_hash,{hash:016x}")?;
        for (k, v) in &summary {
            writeln!(w, "{k},{v:e}")?;
        }
        Ok(())
    })?;
    Ok(RunResult {
        experiment: cfg.experiment,
        artifacts: out.artifacts,
        summary,
        violations: report.violations,
        wall_clock: started.elapsed(),
        config_hash: hash,
    })
}

fn algorithm(cfg: &ExperimentConfig) -> Result<AlgorithmSpec> {
    cfg.algorithm.ok_or_else(|| Error::Config(format!("`algorithm.family` is required for {}", cfg.experiment.name())))
}

fn mse_curve_experiment(cfg: &ExperimentConfig, out: &mut Output, report: &mut Report) -> Result<()> {
    let inst = build_instance(cfg, None)?;
    let prep = Prepared::new(&inst, algorithm(cfg)?, cfg.init, &cfg.start)?;
    let schedule = resolve_stepsize(cfg, &prep)?;
    let ks = checkpoints_for(cfg, cfg.horizon)?;
    let curve = prep.mse(&schedule, cfg.horizon, &ks, cfg)?;
    out.write("mse.csv", |w| curve.write_csv(w))?;
    let title = format!("{} mean squared error", prep.alg.family.name());
    let opts = PlotOptions { title, x_label: "iteration k".into(), y_label: "MSE".into(), log_x: false, log_y: cfg.log_y };
    out.plot("mse.svg", &[Curve { label: prep.alg.family.name().into(), points: mse_points(&curve) }], &opts)?;
    report.put("alpha", schedule.alpha());
    report.put("final_mse", *curve.mean.last().unwrap_or(&f64::NAN));
    report.put("final_stderr", *curve.stderr.last().unwrap_or(&f64::NAN));
    report.put("plateau", curve.plateau);
    report.put("plateau_stderr", curve.plateau_stderr);
    Ok(())
}

struct SweepRow {
    value: f64,
    horizon: usize,
    curve: MseCurve,
    iters_to_2x: Option<usize>,
}

fn sweep_experiment(cfg: &ExperimentConfig, out: &mut Output, report: &mut Report) -> Result<()> {
    let inst = build_instance(cfg, None)?;
    let base = algorithm(cfg)?;
    let by_n = cfg.experiment == ExperimentKind::BiasVarianceN;
    let Some(StepsizeSpec::Fixed(schedule)) = cfg.stepsize else {
        return Err(Error::Config(format!("{} needs a constant stepsize", cfg.experiment.name())));
    };
    let mut rows = Vec::with_capacity(cfg.sweep.len());
    for &value in &cfg.sweep {
        let mut alg = base;
        if by_n {
            alg.n = value as usize;
        } else {
            alg.lambda = value;
        }
        // a fixed sample budget buys budget / n updates when each update reads n samples
        let horizon = match (by_n, cfg.budget) {
            (true, Some(b)) => b / alg.n,
            _ => cfg.horizon,
        };
        if horizon == 0 {
            return Err(Error::Config(format!("sample budget too small for n = {}", alg.n)));
        }
        let ks = checkpoints_for(cfg, horizon)?;
        let prep = Prepared::new(&inst, alg, cfg.init, &cfg.start)?;
        let curve = prep.mse(&schedule, horizon, &ks, cfg)?;
        let iters_to_2x = curve.first_below(2.0);
        rows.push(SweepRow { value, horizon, curve, iters_to_2x });
    }

    out.write("sweep.csv", |w| {
        writeln!(w, "value,horizon,plateau,plateau_stderr,final_mse,final_stderr,iters_to_2x")?;
        for r in &rows {
            let it = r.iters_to_2x.map_or_else(|| "NA".to_string(), |k| k.to_string());
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{it}",
                r.value,
                r.horizon,
                r.curve.plateau,
                r.curve.plateau_stderr,
                r.curve.mean.last().unwrap_or(&f64::NAN),
                r.curve.stderr.last().unwrap_or(&f64::NAN)
            )?;
        }
        Ok(())
    })?;
    out.write("sweep_curves.csv", |w| {
        writeln!(w, "value,k,mse,stderr")?;
        for r in &rows {
            for ((k, m), s) in r.curve.checkpoints.iter().zip(&r.curve.mean).zip(&r.curve.stderr) {
                writeln!(w, "{},{k},{m:e},{s:e}", r.value)?;
            }
        }
        Ok(())
    })?;

    let param = if by_n { "n" } else { "lambda" };
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let plateaus: Vec<f64> = rows.iter().map(|r| r.curve.plateau).collect();
    // never reaching twice the plateau counts as slower than any run that did
    let speeds: Vec<f64> = rows.iter().map(|r| r.iters_to_2x.map_or(r.horizon as f64 + 1.0, |k| k as f64)).collect();
    let curves: Vec<Curve> = rows.iter().map(|r| Curve { label: format!("{param} = {}", r.value), points: mse_points(&r.curve) }).collect();
    let opts = PlotOptions {
        title: format!("MSE by {param}"),
        x_label: "iteration k".into(),
        y_label: "MSE".into(),
        log_x: false,
        log_y: cfg.log_y,
    };
    out.plot("sweep_curves.svg", &curves, &opts)?;
    let plateau_curve = Curve { label: "plateau".into(), points: values.iter().copied().zip(plateaus.iter().copied()).collect() };
    let opts = PlotOptions { title: format!("plateau MSE by {param}"), x_label: param.into(), y_label: "plateau MSE".into(), log_x: false, log_y: cfg.log_y };
    out.plot("sweep_plateau.svg", &[plateau_curve], &opts)?;

    let argmin = rows.iter().min_by(|a, b| a.curve.plateau.total_cmp(&b.curve.plateau)).map_or(f64::NAN, |r| r.value);
    report.put("spearman_plateau", spearman(&values, &plateaus)?);
    report.put("spearman_iters_to_2x", spearman(&values, &speeds)?);
    report.put("argmin_plateau", argmin);
    report.put("alpha", schedule.alpha());
    Ok(())
}

fn contraction_experiment(cfg: &ExperimentConfig, out: &mut Output, report: &mut Report) -> Result<()> {
    let defaults = AlgorithmSpec { family: Family::NStepTd, n: 2, c_bar: 1.0, rho_bar: 1.0, lambda: 0.5 };
    let alg = cfg.algorithm.unwrap_or(defaults);
    let alpha = match cfg.stepsize {
        Some(StepsizeSpec::Fixed(StepsizeSchedule::Constant { alpha })) => alpha,
        _ => DEFAULT_TRUNCATION_ALPHA,
    };
    let mut rows: Vec<(usize, Family, Norm, f64, f64)> = Vec::new();
    for i in 0..instance_count(cfg) {
        let inst = build_instance(cfg, Some(i))?;
        let seed = derive_seed(cfg.base_seed, "contraction", i as u64);
        let mdp = &inst.mdp;
        let q = QLearningOperator::new(mdp, &inst.behavior)?;
        rows.push((i, Family::QLearning, q.norm(), q.beta(), contraction_ratio(&q, q.norm(), cfg.pairs, seed)));
        let v = VTraceOperator::new(mdp, &vtrace_params(&inst, &alg))?;
        rows.push((i, Family::VTrace, v.norm(), v.beta(), contraction_ratio(&v, v.norm(), cfg.pairs, seed)));
        let ns = NStepTdOperator::new(mdp, &inst.target, alg.n)?;
        for norm in [Norm::L1, Norm::L2, Norm::LInf] {
            rows.push((i, Family::NStepTd, norm, ns.beta(), contraction_ratio(&ns, norm, cfg.pairs, seed)));
        }
        let lambda = if alg.lambda > 0.0 { alg.lambda } else { defaults.lambda };
        let td = TdLambdaOperator::new(mdp, &inst.target, TdLambdaParams::from_alpha(mdp.gamma, lambda, alpha)?)?;
        rows.push((i, Family::TdLambda, td.norm(), td.beta(), contraction_ratio(&td, td.norm(), cfg.pairs, seed)));
    }
    let holds = |beta: f64, ratio: f64| ratio <= beta + 1e-12;
    out.write("contraction.csv", |w| {
        writeln!(w, "instance,family,norm,beta,sup_ratio,holds")?;
        for (i, fam, norm, beta, ratio) in &rows {
            writeln!(w, "{i},{},{},{beta:e},{ratio:e},{}", fam.name(), norm_name(*norm), holds(*beta, *ratio))?;
        }
        Ok(())
    })?;
    let mut curves = Vec::new();
    for fam in [Family::QLearning, Family::VTrace, Family::NStepTd, Family::TdLambda] {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.1 == fam && (fam != Family::NStepTd || r.2 == Norm::L2))
            .map(|r| (r.0 as f64, r.4 / r.3))
            .collect();
        curves.push(Curve { label: fam.name().into(), points });
    }
    let opts = PlotOptions { title: "sup ratio / beta".into(), x_label: "instance".into(), y_label: "ratio / beta".into(), log_x: false, log_y: false };
    out.plot("contraction.svg", &curves, &opts)?;
    let worst = rows.iter().map(|r| r.4 - r.3).fold(f64::NEG_INFINITY, f64::max);
    report.violations += rows.iter().filter(|r| !holds(r.3, r.4)).count();
    report.put("checks", rows.len() as f64);
    report.put("max_ratio_minus_beta", worst);
    Ok(())
}

fn norm_name(norm: Norm) -> &'static str {
    match norm {
        Norm::L1 => "l1",
        Norm::L2 => "l2",
        Norm::LInf => "linf",
    }
}

struct EquivalenceRow {
    instance: usize,
    family: Family,
    coord: usize,
    analytic: f64,
    empirical: f64,
    stderr: f64,
}

impl EquivalenceRow {
    fn z(&self) -> f64 {
        let diff = (self.empirical - self.analytic).abs();
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn compare_operator<O: AsyncOperator>(op: &O, instance: usize, cfg: &ExperimentConfig, rows: &mut Vec<EquivalenceRow>) -> Result<()> {
    let chain = op.noise_chain(DEFAULT_MAX_LIFTED_STATES)?;
    let mu = stationary_distribution(&chain)?;
    let seed = derive_seed(cfg.base_seed, op.family().name(), instance as u64);
    let mut rng = crate::rng::child_rng(seed, "point", 0);
    let scale = 1.0 / (1.0 - op.beta().min(0.99));
    let x: Vec<f64> = (0..op.dim()).map(|_| scale * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0)).collect();
    let analytic = op.expected(&x);
    let est = empirical_expected_on(op, &chain, &mu, &x, cfg.oracle_samples, seed, execution_for(cfg))?;
    for (coord, a) in analytic.iter().enumerate() {
        rows.push(EquivalenceRow { instance, family: op.family(), coord, analytic: *a, empirical: est.mean[coord], stderr: est.stderr[coord] });
    }
    Ok(())
}

fn equivalence_experiment(cfg: &ExperimentConfig, out: &mut Output, report: &mut Report) -> Result<()> {
    let defaults = AlgorithmSpec { family: Family::NStepTd, n: 2, c_bar: 1.0, rho_bar: 1.0, lambda: 0.5 };
    let alg = cfg.algorithm.unwrap_or(defaults);
    let alpha = match cfg.stepsize {
        Some(StepsizeSpec::Fixed(StepsizeSchedule::Constant { alpha })) => alpha,
        _ => DEFAULT_TRUNCATION_ALPHA,
    };
    let mut rows = Vec::new();
    for i in 0..instance_count(cfg) {
        let inst = build_instance(cfg, Some(i))?;
        let mdp = &inst.mdp;
        compare_operator(&QLearningOperator::new(mdp, &inst.behavior)?, i, cfg, &mut rows)?;
        compare_operator(&VTraceOperator::new(mdp, &vtrace_params(&inst, &alg))?, i, cfg, &mut rows)?;
        compare_operator(&NStepTdOperator::new(mdp, &inst.target, alg.n)?, i, cfg, &mut rows)?;
        let lambda = if alg.lambda > 0.0 { alg.lambda } else { defaults.lambda };
        let params = TdLambdaParams::from_alpha(mdp.gamma, lambda, alpha)?;
        compare_operator(&TdLambdaOperator::new(mdp, &inst.target, params)?, i, cfg, &mut rows)?;
    }
    out.write("equivalence.csv", |w| {
        writeln!(w, "instance,family,coord,analytic,empirical,stderr,z")?;
        for r in &rows {
            writeln!(w, "{},{},{},{:e},{:e},{:e},{:e}", r.instance, r.family.name(), r.coord, r.analytic, r.empirical, r.stderr, r.z())?;
        }
        Ok(())
    })?;
    let mut curves = Vec::new();
    for fam in [Family::QLearning, Family::VTrace, Family::NStepTd, Family::TdLambda] {
        let points: Vec<(f64, f64)> = rows.iter().filter(|r| r.family == fam).enumerate().map(|(j, r)| (j as f64, r.z())).collect();
        curves.push(Curve { label: fam.name().into(), points });
    }
    let opts = PlotOptions { title: "oracle |z| per coordinate".into(), x_label: "coordinate".into(), y_label: "|z|".into(), log_x: false, log_y: false };
    out.plot("equivalence.svg", &curves, &opts)?;
    let beyond = rows.iter().filter(|r| r.z() > 3.0).count();
    report.violations += beyond;
    report.put("coordinates", rows.len() as f64);
    report.put("beyond_3se", beyond as f64);
    report.put("max_abs_z", rows.iter().map(|r| r.z()).fold(0.0, f64::max));
    Ok(())
}

fn envelope_experiment(cfg: &ExperimentConfig, out: &mut Output, report: &mut Report) -> Result<()> {
    let inst = build_instance(cfg, None)?;
    let prep = Prepared::new(&inst, algorithm(cfg)?, cfg.init, &cfg.start)?;
    let schedule = resolve_stepsize(cfg, &prep)?;
    let alpha = schedule.alpha();
    let opts = BoundOptions::default();
    let bound = prep.bound(alpha, &opts)?;
    if !bound.admissible(alpha) {
        return Err(Error::assumption(
            Assumption::StepsizeBudget,
            format!("alpha = {alpha:e} exceeds the largest admissible {} stepsize {:e}", prep.alg.family.name(), bound.max_constant_stepsize()?),
        ));
    }
    let first_k = bound.first_k(alpha);
    let ks = checkpoints_for(cfg, cfg.horizon)?;
    let curve = prep.mse(&schedule, cfg.horizon, &ks, cfg)?;
    let covered: Vec<usize> = ks.iter().copied().filter(|k| *k >= first_k).collect();
    let terms = bound.constant_curve(alpha, &covered)?;

    let offset = ks.len() - covered.len();
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    out.write("envelope.csv", |w| {
        writeln!(w, "k,mse,stderr,bias,variance,bound,violation")?;
        for (j, k) in ks.iter().enumerate() {
            let (m, s) = (curve.mean[j], curve.stderr[j]);
            if j < offset {
                writeln!(w, "{k},{m:e},{s:e},NA,NA,NA,NA")?;
                continue;
            }
            let t = &terms[j - offset];
            let upper = m + 3.0 * s;
            let violated = upper > t.total;
            violations += usize::from(violated);
            min_slack = min_slack.min(t.total - upper);
            writeln!(w, "{k},{m:e},{s:e},{:e},{:e},{:e},{}", t.bias, t.variance, t.total, violated)?;
        }
        Ok(())
    })?;
    out.write("bound.csv", |w| write_bound_csv(w, &covered, &terms))?;
    out.write("mse.csv", |w| curve.write_csv(w))?;
    let curves = [
        Curve { label: "empirical MSE".into(), points: mse_points(&curve) },
        Curve { label: "bound".into(), points: covered.iter().zip(&terms).map(|(k, t)| (*k as f64, t.total)).collect() },
    ];
    let plot_opts = PlotOptions {
        title: format!("{} bound envelope", prep.alg.family.name()),
        x_label: "iteration k".into(),
        y_label: "MSE".into(),
        log_x: false,
        log_y: cfg.log_y,
    };
    out.plot("envelope.svg", &curves, &plot_opts)?;
    report.violations += violations;
    report.put("alpha", alpha);
    report.put("first_k", first_k as f64);
    report.put("checked_checkpoints", covered.len() as f64);
    report.put("min_slack", min_slack);
    report.put("final_mse", *curve.mean.last().unwrap_or(&f64::NAN));
    report.put("plateau", curve.plateau);
    report.put("plateau_stderr", curve.plateau_stderr);
    Ok(())
}

fn optimal_n_experiment(cfg: &ExperimentConfig, out: &mut Output, report: &mut Report) -> Result<()> {
    let rows: Vec<(f64, usize, usize)> = cfg
        .sweep
        .iter()
        .map(|&g| optimal_n(g).map(|o| (g, o.argmin, o.estimate)))
        .collect::<Result<_>>()?;
    out.write("optimal_n.csv", |w| {
        writeln!(w, "gamma,argmin,estimate,ratio")?;
        for (g, a, e) in &rows {
            writeln!(w, "{g},{a},{e},{:e}", *e as f64 / *a as f64)?;
        }
        Ok(())
    })?;
    let curves = [
        Curve { label: "brute-force argmin".into(), points: rows.iter().map(|r| (r.0, r.1 as f64)).collect() },
        Curve { label: "closed-form estimate".into(), points: rows.iter().map(|r| (r.0, r.2 as f64)).collect() },
    ];
    let opts = PlotOptions { title: "optimal n".into(), x_label: "gamma".into(), y_label: "n".into(), log_x: false, log_y: false };
    out.plot("optimal_n.svg", &curves, &opts)?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.2 as f64 / r.1 as f64).collect();
    report.put("min_ratio", ratios.iter().copied().fold(f64::INFINITY, f64::min));
    report.put("max_ratio", ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(())
}
