//! `kexpectile` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical or domain
//! failure (including failed verification checks).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kexpectile::bench::{self, RateExperiment, TailSchedule};
use kexpectile::kernel::{decay_exponent, empirical_eigendecay, gram, write_eigenvalues_csv};
use kexpectile::selection::{make_grids, tv_svm, GridMode};
use kexpectile::solver::{fit_with, ExpectileModel, FitConfig};
use kexpectile::theory::{BoundReport, CheckRegistry, VerifyContext};
use kexpectile::{ClipLevel, Dataset, Error, GaussianKernel, Points, ProblemRegistry, ProblemSpec};

#[derive(Debug, Parser)]
#[command(name = "kexpectile", version, about = "Kernel expectile regression with asymmetric least squares")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on a CSV dataset with header x1,...,xd,y.
    Train(TrainArgs),
    /// Predict with a saved model on a CSV of covariates with header x1,...,xd.
    Predict(PredictArgs),
    /// Select (lambda, gamma) by training/validation and save the chosen model.
    Tvsvm(TvsvmArgs),
    /// Run a learning-rate experiment on a synthetic problem.
    Rates(RatesArgs),
    /// Run numerical checks of the risk inequalities.
    Verify(VerifyArgs),
    /// Export the eigenvalues of the normalized Gram matrix.
    Eigen(EigenArgs),
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("tau must lie in (0, 1), got {v}"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {v}"))
    }
}

fn parse_grid_mode(s: &str) -> Result<GridMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training data CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_tau)]
    tau: f64,
    #[arg(long, value_parser = parse_positive)]
    lambda: f64,
    #[arg(long, value_parser = parse_positive)]
    gamma: f64,
    /// Clip level M; defaults to the largest |y| in the data.
    #[arg(long, value_parser = parse_positive)]
    clip: Option<f64>,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip clipping at the model's clip level.
    #[arg(long)]
    unclipped: bool,
}

#[derive(Debug, Args)]
struct TvsvmArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_tau)]
    tau: f64,
    /// Smoothness used by the strict gamma grid.
    #[arg(long, default_value_t = bench::DEFAULT_ALPHA, value_parser = parse_positive)]
    alpha: f64,
    /// Grid mode: strict or practical.
    #[arg(long, default_value = "practical", value_parser = parse_grid_mode)]
    grid: GridMode,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Validation table CSV (lambda,gamma,risk).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatesArgs {
    /// Problem kind.
    #[arg(long, default_value = "noiseless-sine")]
    problem: String,
    #[arg(long, default_value_t = 0.5, value_parser = parse_tau)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Noise scale override for the problem.
    #[arg(long, value_parser = parse_positive)]
    noise_scale: Option<f64>,
    #[arg(long, default_value_t = kexpectile::bench::DEFAULT_C1, value_parser = parse_positive)]
    c1: f64,
    #[arg(long, default_value_t = kexpectile::bench::DEFAULT_C2, value_parser = parse_positive)]
    c2: f64,
    #[arg(long, default_value_t = bench::DEFAULT_ALPHA, value_parser = parse_positive)]
    alpha: f64,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = bench::DEFAULT_N_GRID)]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = bench::DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tail constant c; enables clipping at M_n = 2c (rho_hat + ln n)^l.
    #[arg(long, requires = "tail_l")]
    tail_c: Option<f64>,
    #[arg(long, requires = "tail_c")]
    tail_l: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    rho_hat: f64,
    /// Output CSV (n,mean_excess,std_excess).
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON with the fitted slope (default: next to --out).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Checks to run (default: all).
    #[arg(long, value_delimiter = ',')]
    checks: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 10_000)]
    grid_points: usize,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// List the available checks and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Debug, Args)]
struct EigenArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_positive)]
    gamma: f64,
    /// Output CSV (i,lambda).
    #[arg(long)]
    out: PathBuf,
}

/// Failure of a subcommand, mapped onto the exit-code contract.
enum Failure {
    Usage(String),
    Lib(Error),
    ChecksFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let data = Dataset::load(&a.data)?;
    let mut cfg = FitConfig::new(a.tau, a.lambda, a.gamma)?;
    if let Some(m) = a.clip {
        cfg = cfg.with_clip_level(ClipLevel::new(m)?);
    }
    let model = fit_with(&data, &cfg)?;
    model.save(&a.out)?;
    let diag = model.diagnostics();
    println!("objective {:.12e}", diag.objective);
    println!("iterations {}", diag.iterations);
    println!("gradient_norm {:.3e}", diag.gradient_norm);
    if diag.wide_kernel {
        eprintln!("warning: gamma = {} lies outside (0, 1]", a.gamma);
    }
    Ok(())
}

/// Covariates from `x1,...,xd`; a trailing `y` column, as in a training file,
/// is ignored.
fn read_covariates(path: &Path) -> Result<Points, Failure> {
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    if header.trim_end().rsplit(',').next() == Some("y") {
        Ok(Dataset::read_csv(text.as_bytes())?.x().clone())
    } else {
        Ok(Points::read_csv(text.as_bytes())?)
    }
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    let model = ExpectileModel::load(&a.model)?;
    let points = read_covariates(&a.data)?;
    if !points.is_empty() && points.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: points.dim() }.into());
    }
    let preds = if points.is_empty() { Vec::new() } else { model.predict_batch(&points, !a.unclipped)? };
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["prediction"]).map_err(Error::from)?;
    for p in preds {
        w.write_record([p.to_string()]).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_tvsvm(a: TvsvmArgs) -> CmdResult {
    let data = Dataset::load(&a.data)?;
    if data.len() < 4 {
        return Err(Failure::Usage(format!("tvsvm needs at least 4 samples, got {}", data.len())));
    }
    let grids = make_grids(data.len(), a.alpha, data.dim(), a.grid)?;
    let result = tv_svm(&data, a.tau, &grids)?;
    result.model.save(&a.out)?;
    if let Some(t) = &a.table {
        result.write_table_csv(create(t)?)?;
    }
    println!("lambda {}", result.chosen_lambda);
    println!("gamma {}", result.chosen_gamma);
    println!("validation_risk {:.12e}", result.chosen_risk());
    Ok(())
}

fn cmd_rates(a: RatesArgs) -> CmdResult {
    let mut spec = ProblemSpec::new(a.tau, a.dim);
    if let Some(s) = a.noise_scale {
        spec = spec.with_noise_scale(s);
    }
    let problem = ProblemRegistry::builtin().build(&a.problem, &spec)?;
    let exp = RateExperiment::new(a.c1, a.c2, a.alpha, a.dim, a.n_grid, a.repetitions, a.seed)?
        .with_mc_samples(a.mc_samples)?;
    let done = match (a.tail_c, a.tail_l) {
        (Some(c), Some(l)) => bench::unbounded_rate_run(&exp, &TailSchedule::new(c, l, a.rho_hat)?, &problem)?,
        _ => bench::measure_rate(&exp, &problem)?,
    };
    done.write_csv(create(&a.out)?)?;
    let summary = a.summary.unwrap_or_else(|| a.out.with_extension("json"));
    let mut w = create(&summary)?;
    done.write_summary_json(&mut w)?;
    w.flush()?;
    for row in &done.results {
        println!("n={} mean_excess={:.6e} std_excess={:.3e}", row.n, row.mean_excess, row.std_excess);
    }
    match done.slope {
        Some(s) => println!("slope {s:.4}"),
        None => println!("slope undefined"),
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let registry = CheckRegistry::builtin();
    if a.list {
        for c in registry.iter() {
            println!("{:<22} {}", c.name(), c.description());
        }
        return Ok(());
    }
    let names: Vec<String> = if a.checks.is_empty() {
        registry.names().into_iter().map(String::from).collect()
    } else {
        a.checks
    };
    let checks = names
        .iter()
        .map(|n| registry.get(n).map_err(|e| Failure::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = VerifyContext { seed: a.seed, mc_samples: a.mc_samples, trials: a.trials, grid_points: a.grid_points };
    let mut reports: Vec<BoundReport> = Vec::new();
    let mut failed = 0;
    for check in checks {
        let report = check.run(&ctx)?;
        let status = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<22} trials={} violations={} max_slack={:.3e}",
            check.name(),
            report.trials,
            report.violations,
            report.max_slack
        );
        if !report.passed() {
            failed += 1;
        }
        reports.push(report);
    }
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &reports).map_err(Error::from)?;
        w.flush()?;
    }
    if failed > 0 {
        Err(Failure::ChecksFailed(failed))
    } else {
        Ok(())
    }
}

fn cmd_eigen(a: EigenArgs) -> CmdResult {
    let data = Dataset::load(&a.data)?;
    let g = gram(GaussianKernel::new(a.gamma)?, data.x())?;
    let eig = empirical_eigendecay(&g)?;
    write_eigenvalues_csv(&eig, create(&a.out)?)?;
    match decay_exponent(&eig) {
        Some(fit) => println!("slope {:.4} p {:.4} points {}", fit.slope, fit.p, fit.points_used),
        None => println!("decay exponent undefined"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Tvsvm(a) => cmd_tvsvm(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Eigen(a) => cmd_eigen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 3 })
        }
        Err(Failure::ChecksFailed(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(3)
        }
    }
}
