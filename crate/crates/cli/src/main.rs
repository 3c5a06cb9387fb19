mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hopfkit::conditions::run_conditions;
use hopfkit::continuation::{match_solution, trace_branch, write_csv, Checkpoint};
use hopfkit::verify::{run_suite, ProblemKind, Suite};
use hopfkit::HopfError;

use config::{FileConfig, RunConfig};

#[derive(Parser)]
#[command(name = "hopfkit", version, about = "Hopf bifurcation checks and periodic-orbit branches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// example1 or example2
    #[arg(long, global = true)]
    problem: Option<String>,
    /// JSON configuration file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral conditions at the bifurcation point, as a JSON report
    Conditions {
        #[arg(long)]
        k_max: Option<u32>,
        #[arg(long)]
        n_max: Option<u32>,
    },
    /// Trace the branch on an equispaced amplitude grid and write CSV
    Branch {
        #[arg(long)]
        alpha_max: Option<f64>,
        /// Number of amplitude intervals
        #[arg(long)]
        steps: Option<usize>,
        /// Directory for per-point field checkpoints
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Run the acceptance criteria
    Verify {
        #[arg(long, default_value = "fast")]
        suite: String,
        #[arg(long)]
        n_max: Option<u32>,
    },
    /// Identify a checkpointed orbit with a time shift of a branch point
    Match {
        /// Checkpoint JSON with lambda, sigma and field
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        alpha_max: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<HopfError> for Failure {
    fn from(e: HopfError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

/// `Ok(true)` when every check passed.
type Outcome = Result<bool, Failure>;

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Usage(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn intervals(steps: usize) -> Result<usize, Failure> {
    if steps == 0 {
        return Err(Failure::Usage("--steps must be at least 1".into()));
    }
    Ok(steps)
}

fn cmd_conditions(cfg: &RunConfig, k_max: Option<u32>, n_max: Option<u32>) -> Outcome {
    let kind = cfg.require_problem()?;
    let p = cfg.build(kind)?;
    let report = run_conditions(&p, k_max.unwrap_or(cfg.k_max), n_max.unwrap_or(cfg.n_max))?;
    write_json(cfg.out.as_deref(), &report)?;
    Ok(report.all_passed)
}

fn cmd_branch(cfg: &RunConfig, alpha_max: Option<f64>, steps: Option<usize>, checkpoints: Option<&Path>) -> Outcome {
    let kind = cfg.require_problem()?;
    let steps = intervals(steps.unwrap_or(cfg.steps))?;
    let alpha_max = alpha_max.unwrap_or(cfg.alpha_max);
    if !(alpha_max > 0.0 && alpha_max.is_finite()) {
        return Err(Failure::Usage(format!("--alpha-max must be positive, got {alpha_max}")));
    }
    let p = cfg.build(kind)?;
    eprintln!("hopfkit: tracing {kind} up to alpha = {alpha_max} in {steps} steps");
    let (points, failure) = match trace_branch(&p, alpha_max, steps + 1, &cfg.corrector) {
        Ok(b) => (b.points, None),
        Err(partial) => {
            let msg = format!("corrector failed at alpha = {}: {}", partial.failed_alpha, partial.error);
            (partial.branch.points, Some(msg))
        }
    };
    let mut w = output(cfg.out.as_deref())?;
    write_csv(&mut w, &points, failure.as_deref())?;
    w.flush()?;
    if let Some(dir) = checkpoints {
        std::fs::create_dir_all(dir)?;
        for (k, pt) in points.iter().enumerate() {
            write_json(Some(&dir.join(format!("point_{k:04}.json"))), &Checkpoint::from(pt))?;
        }
    }
    match failure {
        Some(msg) => Err(Failure::Numerical(msg)),
        None => Ok(true),
    }
}

fn cmd_verify(cfg: &RunConfig, suite: &str, n_max: Option<u32>) -> Outcome {
    let suite: Suite = suite.parse()?;
    let problems = match cfg.problem {
        Some(k) => vec![k],
        None => vec![ProblemKind::Example1, ProblemKind::Example2],
    };
    let mut vc = cfg.verify_config();
    if let Some(n) = n_max {
        vc.n_max = n;
    }
    let results = run_suite(&vc, suite, &problems);
    for r in &results {
        println!("{}", r.line());
    }
    if let Some(path) = cfg.out.as_deref() {
        write_json(Some(path), &results)?;
    }
    Ok(results.iter().all(|r| r.passed))
}

fn cmd_match(cfg: &RunConfig, field: &Path, alpha_max: Option<f64>, steps: Option<usize>) -> Outcome {
    let kind = cfg.require_problem()?;
    let text = std::fs::read_to_string(field).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", field.display())))?;
    let cp: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", field.display())))?;
    let p = cfg.build(kind)?;
    if cp.field.nt() != p.nt || cp.field.nx() != p.nx() {
        return Err(Failure::Usage(format!(
            "field has nt = {}, nx = {}, the problem has nt = {}, nx = {}",
            cp.field.nt(),
            cp.field.nx(),
            p.nt,
            p.nx()
        )));
    }
    let steps = intervals(steps.unwrap_or(cfg.steps))?;
    let branch = trace_branch(&p, alpha_max.unwrap_or(cfg.alpha_max), steps + 1, &cfg.corrector)
        .map_err(|e| Failure::Numerical(e.error.to_string()))?;
    match match_solution(&p, &branch, cp.lambda, cp.sigma, &cp.field, &cfg.window, &cfg.corrector) {
        Ok(m) => {
            write_json(cfg.out.as_deref(), &m)?;
            Ok(true)
        }
        Err(e @ (HopfError::NoMatch(_) | HopfError::OutsideWindow(_) | HopfError::Degenerate(_))) => {
            eprintln!("hopfkit: {e}");
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("HOPFKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("HOPFKIT_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> Outcome {
    init_threads()?;
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(file, cli.problem.as_deref(), cli.out.clone())?;
    match cli.command {
        Command::Conditions { k_max, n_max } => cmd_conditions(&cfg, k_max, n_max),
        Command::Branch { alpha_max, steps, checkpoints } => cmd_branch(&cfg, alpha_max, steps, checkpoints.as_deref()),
        Command::Verify { suite, n_max } => cmd_verify(&cfg, &suite, n_max),
        Command::Match { field, alpha_max, steps } => cmd_match(&cfg, &field, alpha_max, steps),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("hopfkit: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("hopfkit: {msg}");
            ExitCode::from(3)
        }
    }
}
