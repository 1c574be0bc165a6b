//! Command-line front end: argument parsing, scenario files, and report output.

pub mod report;
pub mod run;
pub mod scenario;
pub mod suite;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use report::{Check, ErrorEntry, Finding, RunReport, SCHEMA_VERSION};
pub use run::run;
pub use scenario::{check_scenario, parse_scenario, resolve_manifold, validate, Command, Diagnostic, Scenario};

use crate::error::{GeoError, Result};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "MTWGEO_THREADS";

#[derive(Parser, Debug)]
#[command(name = "mtwgeo", version, about = "Cut loci, MTW tensors and injectivity-domain convexity on surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Integrate exp_x(t v) with a parallel frame.
    Geodesic(Opts),
    /// First focal time along exp_x(t v).
    Focal(Opts),
    /// Cut time and competing minimizers along a direction.
    Cut(Opts),
    /// Sample the injectivity domain and the tangent focal locus at x.
    Domain(Opts),
    /// Scan the MTW tensor on orthogonal pairs over a named grid.
    MtwScan(Opts),
    /// Evaluate the MTW tensor and its extended variant.
    Tensor(Opts),
    /// Excess function h(t) on a segment with derivative identity checks.
    Segment(Opts),
    /// Convexity of the injectivity domain and differential-inequality checks.
    Convexity(Opts),
    /// Run a verification suite.
    Verify(Opts),
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

#[derive(Args, Debug, Clone, Default)]
pub struct Opts {
    /// Built-in name, declaration file, or inline JSON declaration.
    #[arg(long)]
    pub manifold: String,
    /// Base point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Option<Vec<f64>>,
    /// Tangent vector (first endpoint for segments).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v: Option<Vec<f64>>,
    /// Second segment endpoint.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub xi: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub eta: Option<Vec<f64>>,
    /// Direction angle in the orthonormal frame at x (instead of --v).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Geodesic parameter range.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Number of second-derivative checks on a segment.
    #[arg(long)]
    pub hddot: Option<usize>,
    /// Output directory for the report and artifacts (report goes to stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

impl Opts {
    pub fn into_scenario(self, command: Command) -> Result<Scenario> {
        let mut s = Scenario::new(resolve_manifold(&self.manifold)?, command);
        s.x = self.x;
        s.v = self.v;
        s.v1 = self.v1;
        s.xi = self.xi;
        s.eta = self.eta;
        s.theta = self.theta;
        s.t = self.t;
        s.n = self.n;
        s.step = self.step;
        s.tol = self.tol;
        s.seed = self.seed;
        s.grid = self.grid;
        s.suite = self.suite;
        s.trials = self.trials;
        s.hddot = self.hddot;
        s.out = self.out;
        s.svg = self.svg;
        Ok(s)
    }
}

/// Worker count from the environment, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|n| *n > 0).map(Some).ok_or(GeoError::Parse {
            field: THREADS_ENV.into(),
            message: format!("expected a positive integer, got '{v}'"),
        }),
        Err(_) => Ok(None),
    }
}

/// Run in a dedicated pool of `threads` workers (available parallelism when `None`).
pub fn run_with_threads(s: &Scenario, threads: Option<usize>) -> Result<RunReport> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| GeoError::Precondition(format!("worker pool: {e}")))?;
    Ok(pool.install(|| run(s)))
}

/// Validate, run, and print; returns the process exit code.
pub fn execute(s: Scenario) -> i32 {
    let diags = check_scenario(&s);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("invalid scenario: {d}");
        }
        return 2;
    }
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let report = match run_with_threads(&s, threads) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    if s.out.is_none() {
        println!("{}", report.to_json());
    }
    let sm = &report.summary;
    eprintln!(
        "{}: {} checks, {} passed, {} failed, {} errors",
        s.command.name(),
        sm.checks,
        sm.passed,
        sm.failed,
        sm.errors
    );
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("  FAIL {} ({}): {:.3e} > {:.1e}", c.id, c.operation, c.value, c.tolerance);
    }
    for e in &report.errors {
        eprintln!("  ERROR {} [{}]: {}", e.operation, e.kind, e.message);
    }
    for f in &report.findings {
        eprintln!("  finding {} ({}): {}", f.id, f.operation, f.verdict);
    }
    if sm.ok {
        0
    } else {
        1
    }
}

pub fn main_with(cli: Cli) -> i32 {
    let (command, opts) = match cli.command {
        CliCommand::Geodesic(o) => (Command::Geodesic, o),
        CliCommand::Focal(o) => (Command::Focal, o),
        CliCommand::Cut(o) => (Command::Cut, o),
        CliCommand::Domain(o) => (Command::Domain, o),
        CliCommand::MtwScan(o) => (Command::MtwScan, o),
        CliCommand::Tensor(o) => (Command::Tensor, o),
        CliCommand::Segment(o) => (Command::Segment, o),
        CliCommand::Convexity(o) => (Command::Convexity, o),
        CliCommand::Verify(o) => (Command::Verify, o),
        CliCommand::Run { scenario, out } => {
            let text = match std::fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("{}: {e}", scenario.display());
                    return 2;
                }
            };
            return match parse_scenario(&text) {
                Ok(mut s) => {
                    if out.is_some() {
                        s.out = out;
                    }
                    execute(s)
                }
                Err(d) => {
                    for d in d {
                        eprintln!("invalid scenario: {d}");
                    }
                    2
                }
            };
        }
        CliCommand::Validate { scenario } => {
            return match validate(&scenario) {
                Ok(d) if d.is_empty() => {
                    println!("valid");
                    0
                }
                Ok(d) => {
                    for d in d {
                        println!("{d}");
                    }
                    1
                }
                Err(e) => {
                    eprintln!("{e}");
                    2
                }
            };
        }
    };
    match opts.into_scenario(command) {
        Ok(s) => execute(s),
        Err(e) => {
            eprintln!("{e}");
            2
        }
    }
}
