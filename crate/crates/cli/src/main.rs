use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use salab::bounds::{max_td_lambda_stepsize, BoundOptions, FamilyBound};
use salab::experiments::{load_config, run_experiment};
use salab::mdp::{parse_mdp, random_mdp, random_policy, write_mdp, Mdp, Policy, QFunction, ValueFunction};
use salab::operators::{Family, VTraceParams};
use salab::sa::geometric_checkpoints;
use salab::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_ASSUMPTION: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "salab", version, about = "Markovian stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse and check a config file without running it.
    Validate { config: PathBuf },
    /// MDP utilities.
    Mdp {
        #[command(subcommand)]
        command: MdpCommand,
    },
    /// Print finite-sample bound terms for one algorithm family.
    Bounds(BoundsArgs),
}

#[derive(Subcommand)]
enum MdpCommand {
    /// Generate a random MDP and write it in the text format.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        branching: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct BoundsArgs {
    /// q_learning, v_trace, nstep_td or td_lambda
    family: String,
    /// Read the MDP from a file instead of generating one.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long, default_value_t = 0.7)]
    gamma: f64,
    /// Target policy seed; uniform when omitted.
    #[arg(long)]
    policy_seed: Option<u64>,
    /// Constant stepsize; defaults to the largest admissible one.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    c_bar: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_bar: f64,
    /// Last iteration in the table; rows are at powers of two.
    #[arg(long, default_value_t = 1_000_000)]
    horizon: usize,
    /// Use the worst-case fixed-point norm instead of the solved one.
    #[arg(long)]
    worst_case_norm: bool,
}

fn error_code(e: &Error) -> u8 {
    if e.is_assumption() {
        EXIT_ASSUMPTION
    } else {
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run(&config),
        Command::Validate { config } => load_config(&config).map(|cfg| {
            println!("ok: {} -> {}", cfg.experiment.name(), cfg.output_dir.display());
            0
        }),
        Command::Mdp { command: MdpCommand::Gen { seed, states, actions, branching, gamma, output } } => {
            random_mdp(seed, states, actions, branching, gamma).and_then(|m| std::fs::write(&output, write_mdp(&m)).map_err(Error::from)).map(|_| 0)
        }
        Command::Bounds(args) => bounds(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn run(path: &std::path::Path) -> salab::Result<u8> {
    let cfg = load_config(path)?;
    let result = run_experiment(&cfg)?;
    println!("experiment {} (config {:016x}) finished in {:.2?}", result.experiment.name(), result.config_hash, result.wall_clock);
    for (k, v) in &result.summary {
        println!("  {k:<24} {v:.6e}");
    }
    for a in &result.artifacts {
        println!("  wrote {}", a.display());
    }
    if result.violations > 0 {
        eprintln!("{} check(s) failed", result.violations);
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}

fn bounds(args: &BoundsArgs) -> salab::Result<u8> {
    let family = Family::parse(&args.family).ok_or_else(|| Error::Config(format!("unknown family `{}`", args.family)))?;
    let mdp: Mdp = match &args.mdp {
        Some(p) => parse_mdp(&std::fs::read_to_string(p)?)?,
        None => random_mdp(args.seed, args.states, args.actions, args.branching.unwrap_or(args.states), args.gamma)?,
    };
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let target = args.policy_seed.map_or_else(|| Policy::uniform(ns, na), |s| random_policy(s, ns, na));
    let behavior = Policy::uniform(ns, na);
    let opts = BoundOptions { norm_upper_bound: args.worst_case_norm, ..BoundOptions::default() };
    let v0 = ValueFunction { values: vec![0.0; ns] };

    let (bound, alpha) = match family {
        Family::TdLambda => {
            let alpha = match args.alpha {
                Some(a) => a,
                None => max_td_lambda_stepsize(&mdp, &target, args.lambda, &v0, &opts)?,
            };
            (FamilyBound::td_lambda(&mdp, &target, args.lambda, alpha, &v0, &opts)?, alpha)
        }
        _ => {
            let b = match family {
                Family::QLearning => FamilyBound::q_learning(&mdp, &behavior, &QFunction::zeros(ns, na), &opts)?,
                Family::VTrace => {
                    let params = VTraceParams { n: args.n, c_bar: args.c_bar, rho_bar: args.rho_bar, target: target.clone(), behavior };
                    FamilyBound::vtrace(&mdp, &params, &v0, &opts)?
                }
                _ => FamilyBound::nstep(&mdp, &target, args.n, &v0, &opts)?,
            };
            let alpha = match args.alpha {
                Some(a) => a,
                None => b.max_constant_stepsize()?,
            };
            (b, alpha)
        }
    };

    let first = bound.first_k(alpha);
    println!("family    {}", family.name());
    println!("beta      {:.6}", bound.beta);
    println!("alpha     {alpha:.6e}");
    println!("t_alpha   {}", bound.mixing.mixing_time(alpha));
    println!("first k   {first}");
    println!();
    println!("{:>12} {:>14} {:>14} {:>14}", "k", "bias", "variance", "total");
    let mut ks: Vec<usize> = geometric_checkpoints(args.horizon).into_iter().filter(|k| *k >= first).collect();
    if ks.first() != Some(&first) {
        ks.insert(0, first);
    }
    for k in ks {
        let t = bound.constant(alpha, k)?;
        println!("{k:>12} {:>14.6e} {:>14.6e} {:>14.6e}", t.bias, t.variance, t.total);
    }
    Ok(0)
}
