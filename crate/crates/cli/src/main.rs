mod compute;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asep_blocks::finite::{Method, ParticleConfig};
use asep_blocks::Error;

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "asep-blocks", version, about = "Block and transition probabilities for ASEP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Exact checks of the algebraic identities behind the formulas.
    Identities,
    /// Block probabilities over a grid of (x, m, L, t).
    BlockProb,
    /// P(X, t | Y) for a finite initial configuration.
    TransitionProb,
    /// Block probabilities for step initial condition.
    StepBlockProb,
    /// Cross-method comparison with pass/fail against tolerances.
    Compare,
    /// Oracle values only (uniformization or Monte Carlo).
    Oracle,
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Configuration file (`[section]` / `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Right-jump rate, e.g. 7/10.
    #[arg(long, global = true)]
    p: Option<String>,
    /// Initial configuration: comma list or `step`.
    #[arg(long, global = true)]
    y: Option<String>,
    /// Site range `a..b`, or the target configuration for transition-prob.
    #[arg(long, global = true, allow_hyphen_values = true)]
    x: Option<String>,
    #[arg(long, global = true)]
    m: Option<String>,
    #[arg(long = "L", global = true)]
    l: Option<String>,
    /// Times, comma separated.
    #[arg(long, global = true)]
    t: Option<String>,
    /// Methods, comma separated.
    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    samples: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Quadrature nodes per circle.
    #[arg(long, global = true)]
    nodes: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads for the global pool.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Compute(Error),
    Comparison,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o: {e}"))
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Comparison => 1,
        Failure::Config(_) => 2,
        Failure::Compute(e) => match e {
            Error::Resource(_) | Error::Convergence { .. } | Error::Evaluation(_) | Error::Contour(_) | Error::Pole(_) => 3,
            Error::Parameter(_) | Error::DegenerateParameter(_) | Error::Domain(_) | Error::DivisionByZero(_) => 4,
        },
    }
}

fn load_config(opts: &Opts) -> Result<RunConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            RunConfig::parse_text(&text)?
        }
        None => RunConfig::default(),
    };
    let set = |cfg: &mut RunConfig, section: &str, key: &str, v: Option<String>| -> Result<(), ConfigError> {
        match v {
            Some(v) => cfg.set(section, key, &v),
            None => Ok(()),
        }
    };
    set(&mut cfg, "model", "p", opts.p.clone())?;
    set(&mut cfg, "initial", "y", opts.y.clone())?;
    set(&mut cfg, "query", "x", opts.x.clone())?;
    set(&mut cfg, "query", "m", opts.m.clone())?;
    set(&mut cfg, "query", "L", opts.l.clone())?;
    set(&mut cfg, "query", "t", opts.t.clone())?;
    set(&mut cfg, "query", "methods", opts.method.clone())?;
    set(&mut cfg, "oracle", "samples", opts.samples.map(|v| v.to_string()))?;
    set(&mut cfg, "oracle", "seed", opts.seed.map(|v| v.to_string()))?;
    set(&mut cfg, "contour", "nodes", opts.nodes.map(|v| v.to_string()))?;
    set(&mut cfg, "contour", "tol", opts.tol.map(|v| format!("{v:?}")))?;
    set(&mut cfg, "output", "workers", opts.workers.map(|v| v.to_string()))?;
    set(&mut cfg, "output", "out", opts.out.as_ref().map(|v| v.display().to_string()))?;
    Ok(cfg)
}

fn default_methods(command: Command, y: &ParticleConfig) -> Vec<Method> {
    match (command, y.is_step()) {
        (Command::Compare, false) => vec![Method::Thm1, Method::Thm2],
        (Command::Compare, true) => vec![Method::Thm3, Method::Mc],
        (Command::Oracle, false) => vec![Method::Uniformization],
        (Command::Oracle, true) => vec![Method::Mc],
        (Command::TransitionProb, _) => vec![Method::Transition],
        (_, false) => vec![Method::Thm1],
        (_, true) => vec![Method::Thm3],
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli.opts)?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().map_err(|e| Failure::Config(format!("worker pool: {e}")))?;
    }
    if cli.command == Command::StepBlockProb {
        cfg.y = ParticleConfig::Step;
    }
    let methods = if cfg.methods.is_empty() { default_methods(cli.command, &cfg.y) } else { cfg.methods.clone() };
    match cli.command {
        Command::Identities => {
            let report = report::identities(&cfg)?;
            report::emit_json(&cfg, &report.json)?;
            if report.passed {
                Ok(())
            } else {
                Err(Failure::Comparison)
            }
        }
        Command::BlockProb | Command::StepBlockProb | Command::Oracle => {
            if cli.command == Command::Oracle {
                if let Some(m) = methods.iter().find(|m| !matches!(m, Method::Mc | Method::Uniformization)) {
                    return Err(Failure::Compute(Error::Parameter(format!("{m} is not an oracle method"))));
                }
            }
            cfg.x_range()?;
            let params = cfg.params()?;
            let start = std::time::Instant::now();
            let rows = compute::compute(&cfg, &methods, &params)?;
            report::emit_block(&cfg, cli.command_name(), &methods, &params, &rows, start.elapsed())?;
            Ok(())
        }
        Command::TransitionProb => {
            let params = cfg.params()?;
            let x: ParticleConfig = cfg.x.parse().map_err(|e| Failure::Config(format!("invalid target configuration {:?}: {e}", cfg.x)))?;
            let start = std::time::Instant::now();
            let rows = compute::transition_rows(&cfg, &x, &methods, &params)?;
            report::emit_transition(&cfg, &x, &methods, &params, &rows, start.elapsed())?;
            Ok(())
        }
        Command::Compare => {
            if methods.len() < 2 {
                return Err(Failure::Config("compare needs at least two methods".into()));
            }
            cfg.x_range()?;
            let params = cfg.params()?;
            let rows = compute::compute(&cfg, &methods, &params)?;
            let cmp = report::compare(&cfg, &methods, &rows);
            report::emit_json(&cfg, &cmp.json)?;
            eprintln!("compare: {} pairs, max |diff| {:.3e}, max |z| {:.2}, {}", cmp.pairs, cmp.max_abs_diff, cmp.max_abs_z, if cmp.passed { "PASS" } else { "FAIL" });
            if cmp.passed {
                Ok(())
            } else {
                Err(Failure::Comparison)
            }
        }
    }
}

impl Cli {
    fn command_name(&self) -> &'static str {
        match self.command {
            Command::Identities => "identities",
            Command::BlockProb => "block-prob",
            Command::TransitionProb => "transition-prob",
            Command::StepBlockProb => "step-block-prob",
            Command::Compare => "compare",
            Command::Oracle => "oracle",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(msg) => eprintln!("config error: {msg}"),
                Failure::Compute(e) => eprintln!("error: {e}"),
                Failure::Comparison => {}
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
