//! Line-oriented `key = value` experiment configs.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | key '=' value [comment]
//! comment := '#' anything
//! key     := ident ('.' ident)*        ident := [a-z_][a-z0-9_]*
//! value   := any text up to '#' or end of line, surrounding spaces trimmed
//! ```
//!
//! Keys may appear at most once; unknown keys are rejected with the
//! closest known key as a suggestion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::operators::Family;
use crate::sa::StepsizeSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    MseCurve,
    BiasVarianceN,
    BiasVarianceLambda,
    ContractionCheck,
    OperatorEquivalence,
    BoundEnvelope,
    OptimalNScan,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::MseCurve,
        ExperimentKind::BiasVarianceN,
        ExperimentKind::BiasVarianceLambda,
        ExperimentKind::ContractionCheck,
        ExperimentKind::OperatorEquivalence,
        ExperimentKind::BoundEnvelope,
        ExperimentKind::OptimalNScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MseCurve => "mse_curve",
            ExperimentKind::BiasVarianceN => "bias_variance_n",
            ExperimentKind::BiasVarianceLambda => "bias_variance_lambda",
            ExperimentKind::ContractionCheck => "contraction_check",
            ExperimentKind::OperatorEquivalence => "operator_equivalence",
            ExperimentKind::BoundEnvelope => "bound_envelope",
            ExperimentKind::OptimalNScan => "optimal_n_scan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    Random { seed: u64, states: usize, actions: usize, branching: usize, gamma: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Uniform,
    Random(u64),
    /// Behaviour policy equal to the target policy.
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    Stationary,
    State(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Zeros,
    FixedPoint,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointPolicy {
    Geometric,
    Linear(usize),
    List(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeSpec {
    Fixed(StepsizeSchedule),
    /// `scale` times the largest constant stepsize the family's bound admits.
    Admissible { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmSpec {
    pub family: Family,
    pub n: usize,
    pub c_bar: f64,
    pub rho_bar: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    pub base_seed: u64,
    pub runs: usize,
    pub horizon: usize,
    pub checkpoints: CheckpointPolicy,
    pub threads: Option<usize>,
    pub mdp: Option<MdpSource>,
    pub target: PolicySpec,
    pub behavior: PolicySpec,
    pub start: StartSpec,
    pub init: InitSpec,
    pub algorithm: Option<AlgorithmSpec>,
    pub stepsize: Option<StepsizeSpec>,
    pub sweep: Vec<f64>,
    /// Sample budget for `bias_variance_n`; each update costs `n` samples.
    pub budget: Option<usize>,
    pub instances: usize,
    pub pairs: usize,
    pub oracle_samples: usize,
    pub log_y: bool,
    /// Raw entries in key order, used for hashing.
    pub entries: BTreeMap<String, String>,
}

pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "output_dir",
    "base_seed",
    "runs",
    "horizon",
    "checkpoints",
    "threads",
    "mdp.file",
    "mdp.seed",
    "mdp.states",
    "mdp.actions",
    "mdp.branching",
    "mdp.gamma",
    "policy.target",
    "policy.behavior",
    "start",
    "init",
    "algorithm.family",
    "algorithm.n",
    "algorithm.c_bar",
    "algorithm.rho_bar",
    "algorithm.lambda",
    "stepsize.kind",
    "stepsize.alpha",
    "stepsize.h",
    "stepsize.xi",
    "stepsize.scale",
    "sweep.values",
    "sweep.budget",
    "instances",
    "pairs",
    "oracle.samples",
    "plot.log_y",
];

struct Entry {
    value: String,
    line: usize,
    column: usize,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn nearest_key(key: &str) -> &'static str {
    // compare against both the full key and its last component, so
    // `alpha0` finds `stepsize.alpha`
    let score = |k: &str| {
        let leaf = k.rsplit('.').next().unwrap_or(k);
        strsim::levenshtein(key, k).min(strsim::levenshtein(key, leaf))
    };
    KNOWN_KEYS.iter().min_by_key(|k| score(k)).copied().unwrap_or("experiment")
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let Some(eq) = body.find('=') else {
            let column = body.len() - body.trim_start().len() + 1;
            return Err(Error::Parse { line, column, message: "expected `key = value`".into() });
        };
        let key = body[..eq].trim();
        let key_col = body.len() - body.trim_start().len() + 1;
        if key.is_empty() || !key.split('.').all(is_ident) {
            return Err(Error::Parse { line, column: key_col, message: format!("invalid key `{key}`") });
        }
        let rest = &body[eq + 1..];
        let value = rest.trim();
        let val_col = eq + 2 + (rest.len() - rest.trim_start().len());
        if value.is_empty() {
            return Err(Error::Parse { line, column: val_col, message: format!("missing value for `{key}`") });
        }
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Parse {
                line,
                column: key_col,
                message: format!("unknown key `{key}`; did you mean `{}`?", nearest_key(key)),
            });
        }
        if out.contains_key(key) {
            return Err(Error::Parse { line, column: key_col, message: format!("duplicate key `{key}`") });
        }
        out.insert(key.to_string(), Entry { value: value.to_string(), line, column: val_col });
    }
    Ok(out)
}

struct Fields {
    map: BTreeMap<String, Entry>,
}

impl Fields {
    fn raw(&self, key: &str) -> Option<&Entry> {
        self.map.get(key)
    }

    fn bad(&self, key: &str, what: &str) -> Error {
        let e = &self.map[key];
        Error::Config(format!("line {}, column {}: `{key}` {what}, got `{}`", e.line, e.column, e.value))
    }

    fn get<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| self.bad(key, what)),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get::<usize>(key, "must be a non-negative integer")?.unwrap_or(default))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        let v = self.get::<f64>(key, "must be a number")?;
        match v {
            Some(x) if !x.is_finite() => Err(self.bad(key, "must be finite")),
            _ => Ok(v),
        }
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }
}

fn parse_policy(fields: &Fields, key: &str, allow_target: bool) -> Result<PolicySpec> {
    let Some(e) = fields.raw(key) else {
        return Ok(PolicySpec::Uniform);
    };
    match e.value.as_str() {
        "uniform" => Ok(PolicySpec::Uniform),
        "target" if allow_target => Ok(PolicySpec::Target),
        v => match v.strip_prefix("random:").map(|s| s.trim().parse::<u64>()) {
            Some(Ok(seed)) => Ok(PolicySpec::Random(seed)),
            _ => Err(fields.bad(key, "must be `uniform`, `random:<seed>` or, for the behaviour policy, `target`")),
        },
    }
}

fn parse_list<T: std::str::FromStr>(fields: &Fields, key: &str) -> Result<Vec<T>> {
    let Some(e) = fields.raw(key) else {
        return Ok(Vec::new());
    };
    e.value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| fields.bad(key, "must be a comma-separated list of numbers")))
        .collect()
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    if cfg.output_dir.is_relative() {
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    if let Some(MdpSource::File(f)) = &mut cfg.mdp {
        if f.is_relative() {
            *f = base.join(&*f);
        }
    }
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let fields = Fields { map: parse_entries(text)? };
    let kind_raw = fields.require("experiment", fields.raw("experiment"))?;
    let experiment = ExperimentKind::parse(&kind_raw.value).ok_or_else(|| {
        let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        fields.bad("experiment", &format!("must be one of {}", names.join(", ")))
    })?;
    let output_dir = PathBuf::from(&fields.require("output_dir", fields.raw("output_dir"))?.value);
    let base_seed = fields.get::<u64>("base_seed", "must be a non-negative integer")?.unwrap_or(0);
    let runs = fields.usize_or("runs", 100)?;
    let horizon = fields.usize_or("horizon", 10_000)?;
    let checkpoints = match fields.raw("checkpoints").map(|e| e.value.as_str()) {
        None | Some("geometric") => CheckpointPolicy::Geometric,
        Some(v) => {
            if let Some(count) = v.strip_prefix("linear:") {
                CheckpointPolicy::Linear(count.trim().parse().map_err(|_| fields.bad("checkpoints", "needs an integer count"))?)
            } else {
                CheckpointPolicy::List(parse_list(&fields, "checkpoints")?)
            }
        }
    };
    let threads = fields.get::<usize>("threads", "must be a non-negative integer")?;

    let mdp = if let Some(e) = fields.raw("mdp.file") {
        if ["mdp.seed", "mdp.states", "mdp.actions", "mdp.branching", "mdp.gamma"].iter().any(|k| fields.raw(k).is_some()) {
            return Err(Error::Config("`mdp.file` cannot be combined with generated-MDP keys".into()));
        }
        Some(MdpSource::File(PathBuf::from(&e.value)))
    } else if fields.raw("mdp.states").is_some() || fields.raw("mdp.gamma").is_some() {
        let states = fields.require("mdp.states", fields.get::<usize>("mdp.states", "must be an integer")?)?;
        let actions = fields.require("mdp.actions", fields.get::<usize>("mdp.actions", "must be an integer")?)?;
        let gamma = fields.require("mdp.gamma", fields.f64_opt("mdp.gamma")?)?;
        Some(MdpSource::Random {
            seed: fields.get::<u64>("mdp.seed", "must be an integer")?.unwrap_or(0),
            states,
            actions,
            branching: fields.usize_or("mdp.branching", states)?,
            gamma,
        })
    } else {
        None
    };

    let target = parse_policy(&fields, "policy.target", false)?;
    let behavior = parse_policy(&fields, "policy.behavior", true)?;
    let start = match fields.raw("start").map(|e| e.value.as_str()) {
        None | Some("stationary") => StartSpec::Stationary,
        Some(v) => match v.strip_prefix("state:").map(|s| s.trim().parse::<usize>()) {
            Some(Ok(s)) => StartSpec::State(s),
            _ => return Err(fields.bad("start", "must be `stationary` or `state:<index>`")),
        },
    };
    let init = match fields.raw("init").map(|e| e.value.as_str()) {
        None | Some("zeros") => InitSpec::Zeros,
        Some("fixed_point") => InitSpec::FixedPoint,
        Some(v) => match v.strip_prefix("constant:").map(|s| s.trim().parse::<f64>()) {
            Some(Ok(c)) if c.is_finite() => InitSpec::Constant(c),
            _ => return Err(fields.bad("init", "must be `zeros`, `fixed_point` or `constant:<value>`")),
        },
    };

    let algorithm = match fields.raw("algorithm.family") {
        None => {
            if let Some(k) = ["algorithm.n", "algorithm.c_bar", "algorithm.rho_bar", "algorithm.lambda"].iter().find(|k| fields.raw(k).is_some()) {
                return Err(Error::Config(format!("`{k}` given without `algorithm.family`")));
            }
            None
        }
        Some(e) => {
            let family = Family::parse(&e.value)
                .ok_or_else(|| fields.bad("algorithm.family", "must be one of q_learning, v_trace, nstep_td, td_lambda"))?;
            Some(AlgorithmSpec {
                family,
                n: fields.usize_or("algorithm.n", 1)?,
                c_bar: fields.f64_opt("algorithm.c_bar")?.unwrap_or(1.0),
                rho_bar: fields.f64_opt("algorithm.rho_bar")?.unwrap_or(1.0),
                lambda: fields.f64_opt("algorithm.lambda")?.unwrap_or(0.5),
            })
        }
    };

    let stepsize = match fields.raw("stepsize.kind").map(|e| e.value.as_str()) {
        None => {
            if fields.raw("stepsize.alpha").is_some() {
                Some(StepsizeSpec::Fixed(StepsizeSchedule::Constant { alpha: fields.f64_opt("stepsize.alpha")?.unwrap() }))
            } else {
                None
            }
        }
        Some(kind) => {
            let alpha = || -> Result<f64> { fields.require("stepsize.alpha", fields.f64_opt("stepsize.alpha")?) };
            let h = || -> Result<f64> { fields.require("stepsize.h", fields.f64_opt("stepsize.h")?) };
            let spec = match kind {
                "constant" => StepsizeSpec::Fixed(StepsizeSchedule::Constant { alpha: alpha()? }),
                "linear" => StepsizeSpec::Fixed(StepsizeSchedule::Linear { alpha: alpha()?, h: h()? }),
                "polynomial" => StepsizeSpec::Fixed(StepsizeSchedule::Polynomial {
                    alpha: alpha()?,
                    h: h()?,
                    xi: fields.require("stepsize.xi", fields.f64_opt("stepsize.xi")?)?,
                }),
                "admissible" => StepsizeSpec::Admissible { scale: fields.f64_opt("stepsize.scale")?.unwrap_or(1.0) },
                _ => return Err(fields.bad("stepsize.kind", "must be constant, linear, polynomial or admissible")),
            };
            if let StepsizeSpec::Fixed(s) = spec {
                s.validate().map_err(|e| Error::Config(format!("stepsize: {e}")))?;
            }
            if let StepsizeSpec::Admissible { scale } = spec {
                if !(scale > 0.0 && scale <= 1.0) {
                    return Err(fields.bad("stepsize.scale", "must lie in (0, 1]"));
                }
            }
            Some(spec)
        }
    };

    let sweep = parse_list::<f64>(&fields, "sweep.values")?;
    let budget = fields.get::<usize>("sweep.budget", "must be a positive integer")?;
    let log_y = match fields.raw("plot.log_y").map(|e| e.value.as_str()) {
        None | Some("true") => true,
        Some("false") => false,
        _ => return Err(fields.bad("plot.log_y", "must be true or false")),
    };

    let cfg = ExperimentConfig {
        experiment,
        output_dir,
        base_seed,
        runs,
        horizon,
        checkpoints,
        threads,
        mdp,
        target,
        behavior,
        start,
        init,
        algorithm,
        stepsize,
        sweep,
        budget,
        instances: fields.usize_or("instances", 10)?,
        pairs: fields.usize_or("pairs", 1000)?,
        oracle_samples: fields.usize_or("oracle.samples", 1_000_000)?,
        log_y,
        entries: fields.map.into_iter().map(|(k, e)| (k, e.value)).collect(),
    };
    validate_config(&cfg)?;
    Ok(cfg)
}

fn need<T>(v: &Option<T>, key: &str, kind: ExperimentKind) -> Result<()> {
    if v.is_none() {
        return Err(Error::Config(format!("`{key}` is required for {}", kind.name())));
    }
    Ok(())
}

/// Semantic checks: the blocks the chosen experiment reads are present and
/// in range.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    use ExperimentKind::*;
    let kind = cfg.experiment;
    if let Some(MdpSource::Random { states, actions, branching, gamma, .. }) = cfg.mdp {
        if states == 0 || actions == 0 || branching == 0 || branching > states {
            return Err(Error::Config("mdp: need states, actions >= 1 and 1 <= branching <= states".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("mdp.gamma = {gamma} must lie in (0, 1)")));
        }
    }
    if matches!(kind, MseCurve | BiasVarianceN | BiasVarianceLambda | BoundEnvelope) {
        if cfg.runs < 2 {
            return Err(Error::Config(format!("runs = {} but {} needs at least 2 runs", cfg.runs, kind.name())));
        }
        if cfg.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
    }
    if kind != OptimalNScan {
        need(&cfg.mdp, "mdp.states or mdp.file", kind)?;
    }
    match kind {
        MseCurve | BoundEnvelope => {
            need(&cfg.algorithm, "algorithm.family", kind)?;
            need(&cfg.stepsize, "stepsize.kind", kind)?;
            if kind == BoundEnvelope {
                if let Some(StepsizeSpec::Fixed(s)) = cfg.stepsize {
                    if !matches!(s, StepsizeSchedule::Constant { .. }) {
                        return Err(Error::Config("bound_envelope compares constant-stepsize bounds; use stepsize.kind = constant or admissible".into()));
                    }
                }
            }
        }
        BiasVarianceN | BiasVarianceLambda => {
            match cfg.stepsize {
                Some(StepsizeSpec::Fixed(StepsizeSchedule::Constant { .. })) => {}
                _ => return Err(Error::Config(format!("{} needs stepsize.kind = constant", kind.name()))),
            }
            if cfg.sweep.len() < 2 {
                return Err(Error::Config(format!("sweep.values needs at least two grid points for {}", kind.name())));
            }
            if kind == BiasVarianceN && cfg.sweep.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                return Err(Error::Config("sweep.values for bias_variance_n must be positive integers".into()));
            }
            if kind == BiasVarianceLambda && cfg.sweep.iter().any(|v| !(0.0..1.0).contains(v)) {
                return Err(Error::Config("sweep.values for bias_variance_lambda must lie in [0, 1)".into()));
            }
        }
        ContractionCheck | OperatorEquivalence => {
            if cfg.instances == 0 || (kind == ContractionCheck && cfg.pairs == 0) || (kind == OperatorEquivalence && cfg.oracle_samples < 2) {
                return Err(Error::Config(format!("{} needs positive instances, pairs and oracle.samples", kind.name())));
            }
        }
        OptimalNScan => {
            if cfg.sweep.is_empty() || cfg.sweep.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
                return Err(Error::Config("optimal_n_scan needs sweep.values with discount factors in (0, 1)".into()));
            }
        }
    }
    if let Some(a) = cfg.algorithm {
        if a.n == 0 {
            return Err(Error::Config("algorithm.n must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&a.lambda) {
            return Err(Error::Config(format!("algorithm.lambda = {} must lie in [0, 1)", a.lambda)));
        }
    }
    if let CheckpointPolicy::Linear(0) = cfg.checkpoints {
        return Err(Error::Config("checkpoints = linear:<count> needs a positive count".into()));
    }
    Ok(())
}
