//! Command-line front end for `ldrisk`.
//!
//! Each subcommand prints one CSV table on stdout and a JSON [`RunManifest`]
//! on stderr. Exit codes: 0 on success, 1 when the model or the computation
//! fails, 2 on usage errors.

pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use ldrisk::cgf::CgfError;
use ldrisk::counterexample::{subsequence_rates, CounterexampleError};
use ldrisk::legendre::{conjugate, rate_upper_bound, LegendreError, TwoPoint};
use ldrisk::mc::McError;
use ldrisk::moderate::{md_log_prob_prediction, MdError};
use ldrisk::{
    build_counterexample, md_threshold, sample_plain, sample_tilted, validate_model, AssumptionBounds,
    ExactConfig, ExactError, ExactOracle, ExtendedReal, MdQuery, MixtureCgf, ModelError, ModelFile,
    PortfolioModel, TailKind,
};

pub use manifest::RunManifest;
pub use output::{emit_curve, CsvRow};

use output::{ExactRow, MdpRow, SubsequenceRow, SummaryRow};

/// Seed used by `mc` when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20240917;

#[derive(Debug, Parser)]
#[command(name = "ldrisk", version, about = "Tail estimates for the average loss of a bounded portfolio")]
pub struct Cli {
    /// Worker threads for the parallel estimators [default: available parallelism]
    #[arg(long, global = true)]
    pub threads: Option<NonZeroUsize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mixture CGF and its first two derivatives over a lambda grid
    Cgf(CgfArgs),
    /// Rate function Lambda*(x)
    Rate(RateArgs),
    /// Upper-bound exponent from the max of finite-n CGFs over checkpoints
    Bound(BoundArgs),
    /// Exact tail probability of the mean by lattice convolution
    Exact(ExactArgs),
    /// Monte Carlo tail estimate, plain or exponentially tilted
    Mc(McArgs),
    /// Moderate-deviation thresholds and predicted log-probability
    Mdp(MdpArgs),
    /// Subsequence rates of the two-class block schedule
    Counterexample(CounterexampleArgs),
    /// Check a model file against its bounds
    Validate(ValidateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Cgf(_) => "cgf",
            Command::Rate(_) => "rate",
            Command::Bound(_) => "bound",
            Command::Exact(_) => "exact",
            Command::Mc(_) => "mc",
            Command::Mdp(_) => "mdp",
            Command::Counterexample(_) => "counterexample",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CgfArgs {
    /// Model file (JSON)
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub lambda_max: f64,
    /// Grid points, endpoints included
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    /// Use the finite-n CGF instead of the limit
    #[arg(long)]
    pub n: Option<u64>,
}

/// Thresholds given either as a list or as an evenly spaced grid.
#[derive(Debug, Args, Serialize)]
pub struct Thresholds {
    /// Comma-separated thresholds
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required_unless_present = "x_max",
        conflicts_with = "x_max"
    )]
    pub x: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub x_min: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub x_max: Option<f64>,
    /// Grid points for --x-min/--x-max, endpoints included
    #[arg(long, default_value_t = 51)]
    pub points: usize,
}

impl Thresholds {
    fn values(&self) -> Result<Vec<f64>, CliError> {
        match self.x_max {
            Some(max) => grid(self.x_min, max, self.points),
            None => Ok(self.x.clone()),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub thresholds: Thresholds,
    /// Use the finite-n CGF instead of the limit
    #[arg(long)]
    pub n: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub thresholds: Thresholds,
    /// Comma-separated n at which the finite-n CGFs are taken
    #[arg(long, value_delimiter = ',', required = true)]
    pub checkpoints: Vec<u64>,
    /// Checkpoints below this n are ignored
    #[arg(long, default_value_t = 1)]
    pub burn_in: u64,
    /// The supremum runs over lambda in [0, lambda_max]
    #[arg(long, default_value_t = 50.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 5001)]
    pub lambda_points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ExactArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: u64,
    /// Comma-separated thresholds
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub x: Vec<f64>,
    /// Strict inequality: P[M_n > x] (or P[M_n < x] with --lower)
    #[arg(long)]
    pub strict: bool,
    /// Lower tail P[M_n <= x]
    #[arg(long)]
    pub lower: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct McArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: u64,
    #[arg(long, allow_negative_numbers = true)]
    pub x: f64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Tilt at the maximiser of the finite-n conjugate problem
    #[arg(long)]
    pub tilted: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct MdpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub c: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct CounterexampleArgs {
    /// Block length ratio B
    #[arg(long, default_value_t = 10)]
    pub growth: u64,
    /// Number of blocks
    #[arg(long, default_value_t = 7)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.5)]
    pub x: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// Model file (JSON)
    pub model: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ModelError },
    #[error("{0} assumption violation(s)")]
    Invalid(usize),
    #[error(transparent)]
    Cgf(#[from] CgfError),
    #[error(transparent)]
    Legendre(#[from] LegendreError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Md(#[from] MdError),
    #[error(transparent)]
    Counterexample(#[from] CounterexampleError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            _ => 1,
        }
    }
}

/// Output of one subcommand.
struct Report {
    csv: String,
    failed: Option<CliError>,
}

impl Report {
    fn ok(csv: String) -> Self {
        Report { csv, failed: None }
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.get())
            .build_global();
    }

    let started = Instant::now();
    let mut manifest = RunManifest::new(cli.command.name(), params(&cli.command));
    let result = dispatch(&cli.command, &mut manifest);
    manifest.finish(started.elapsed());

    let stderr = io::stderr();
    let mut err = stderr.lock();
    let _ = writeln!(err, "{}", manifest.to_json());
    match result {
        Ok(report) => {
            let mut out = io::stdout().lock();
            if out.write_all(report.csv.as_bytes()).and_then(|_| out.flush()).is_err() {
                return 1;
            }
            match report.failed {
                None => 0,
                Some(e) => {
                    let _ = writeln!(err, "error: {e}");
                    e.exit_code()
                }
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn params(command: &Command) -> serde_json::Value {
    let value = match command {
        Command::Cgf(a) => serde_json::to_value(a),
        Command::Rate(a) => serde_json::to_value(a),
        Command::Bound(a) => serde_json::to_value(a),
        Command::Exact(a) => serde_json::to_value(a),
        Command::Mc(a) => serde_json::to_value(a),
        Command::Mdp(a) => serde_json::to_value(a),
        Command::Counterexample(a) => serde_json::to_value(a),
        Command::Validate(a) => serde_json::to_value(a),
    };
    value.expect("arguments are plain data")
}

fn dispatch(command: &Command, manifest: &mut RunManifest) -> Result<Report, CliError> {
    match command {
        Command::Cgf(a) => {
            let (model, _) = load(&a.model, manifest)?;
            let cgf = cgf_for(&model, a.n)?;
            let points: Vec<_> = grid(a.lambda_min, a.lambda_max, a.points)?
                .into_iter()
                .map(|l| cgf.eval(l))
                .collect();
            Ok(Report::ok(emit_curve(&points)))
        }
        Command::Rate(a) => {
            let (model, _) = load(&a.model, manifest)?;
            let cgf = cgf_for(&model, a.n)?;
            let points = a
                .thresholds
                .values()?
                .into_iter()
                .map(|x| conjugate(&cgf, x))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Report::ok(emit_curve(&points)))
        }
        Command::Bound(a) => {
            let (model, _) = load(&a.model, manifest)?;
            if !(a.lambda_max > 0.0) {
                return Err(CliError::Usage("--lambda-max must be positive".into()));
            }
            let lambdas = grid(0.0, a.lambda_max, a.lambda_points)?;
            let points = a
                .thresholds
                .values()?
                .into_iter()
                .map(|x| rate_upper_bound(&model, x, &lambdas, &a.checkpoints, a.burn_in))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Report::ok(emit_curve(&points)))
        }
        Command::Exact(a) => {
            let (model, _) = load(&a.model, manifest)?;
            let config = exact_config(manifest);
            let oracle = ExactOracle::new(model, config)?;
            let kind = if a.strict { TailKind::Greater } else { TailKind::AtLeast };
            let rows = a
                .x
                .iter()
                .map(|&x| {
                    let tail = if a.lower {
                        oracle.lower_tail(a.n, x, kind)?
                    } else {
                        oracle.upper_tail(a.n, x, kind)?
                    };
                    Ok(ExactRow {
                        n: a.n,
                        x,
                        tail_probability: tail.probability(),
                        log_rate: tail.log_rate(a.n),
                    })
                })
                .collect::<Result<Vec<_>, ExactError>>()?;
            Ok(Report::ok(emit_curve(&rows)))
        }
        Command::Mc(a) => {
            let (model, _) = load(&a.model, manifest)?;
            manifest.seed = Some(a.seed);
            let estimate = if a.tilted {
                sample_tilted(&model, a.n, a.x, a.samples, a.seed)?
            } else {
                sample_plain(&model, a.n, a.x, a.samples, a.seed)?
            };
            Ok(Report::ok(emit_curve(&[estimate])))
        }
        Command::Mdp(a) => {
            let (model, bounds) = load(&a.model, manifest)?;
            let q = MdQuery::new(a.c, a.alpha, a.n)?;
            let thresholds = md_threshold(&q, &model, &bounds);
            let prediction = md_log_prob_prediction(&q);
            let row = MdpRow {
                n: a.n,
                alpha: a.alpha,
                c: a.c,
                threshold_exact: thresholds.exact,
                threshold_lower: thresholds.lower,
                threshold_upper: thresholds.upper,
                predicted_minus_log_prob: prediction.leading,
                correction_scale: prediction.correction_scale,
            };
            Ok(Report::ok(emit_curve(&[row])))
        }
        Command::Counterexample(a) => counterexample(a, manifest),
        Command::Validate(a) => {
            let text = read(&a.model, manifest)?;
            let (model, bounds) = ModelFile::parse(&text)
                .and_then(ModelFile::build_unchecked)
                .map_err(|source| CliError::Model {
                    path: a.model.clone(),
                    source,
                })?;
            let report = validate_model(&model, &bounds);
            let failed = (!report.is_valid()).then_some(CliError::Invalid(report.violations.len()));
            Ok(Report {
                csv: emit_curve(&report.violations),
                failed,
            })
        }
    }
}

fn counterexample(a: &CounterexampleArgs, manifest: &mut RunManifest) -> Result<Report, CliError> {
    let ce = build_counterexample(a.growth, a.depth)?;
    let config = exact_config(manifest);
    let unit = subsequence_rates(&ce, a.x, TwoPoint::Unit, config)?;
    let double = subsequence_rates(&ce, a.x, TwoPoint::Double, config)?;

    let mut rows = Vec::new();
    for (section, report) in [("unit", &unit), ("double", &double)] {
        rows.extend(report.points.iter().map(|p| SubsequenceRow {
            section,
            n: p.n,
            unit_density: p.unit_density,
            log_rate: p.log_rate,
            target: report.target,
        }));
    }
    let separation = match (unit.last_rate(), double.last_rate()) {
        (Some(ExtendedReal::Finite(u)), Some(ExtendedReal::Finite(d))) => (u - d).abs(),
        _ => f64::INFINITY,
    };
    let summary = SummaryRow {
        unit_gap: unit.gap,
        double_gap: double.gap,
        separation,
        partial: unit.partial || double.partial,
    };
    let mut csv = emit_curve(&rows);
    csv.push('\n');
    csv.push_str(&emit_curve(&[summary]));
    Ok(Report::ok(csv))
}

fn read(path: &Path, manifest: &mut RunManifest) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    manifest.model_sha256 = Some(manifest::sha256_hex(&bytes));
    String::from_utf8(bytes).map_err(|e| CliError::Io {
        path: path.to_owned(),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })
}

/// Reads and validates a model file.
fn load(path: &Path, manifest: &mut RunManifest) -> Result<(PortfolioModel, AssumptionBounds), CliError> {
    let text = read(path, manifest)?;
    ldrisk::load_model(&text).map_err(|source| CliError::Model {
        path: path.to_owned(),
        source,
    })
}

fn exact_config(manifest: &mut RunManifest) -> ExactConfig {
    let config = ExactConfig::from_env();
    manifest.memory_budget = Some(config.memory_budget);
    config
}

fn cgf_for(model: &PortfolioModel, n: Option<u64>) -> Result<MixtureCgf, CliError> {
    match n {
        Some(0) => Err(CliError::Usage("--n must be at least 1".into())),
        Some(n) => Ok(MixtureCgf::empirical(model, n)),
        None => MixtureCgf::limit(model).map_err(|_| {
            CliError::Usage("block-scheduled models have no limit CGF; pass --n to use the finite-n CGF".into())
        }),
    }
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
fn grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(CliError::Usage(format!("invalid grid range [{lo}, {hi}]")));
    }
    match points {
        0 => Err(CliError::Usage("grid needs at least one point".into())),
        1 => Ok(vec![lo]),
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            Ok((0..points)
                .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
                .collect())
        }
    }
}
