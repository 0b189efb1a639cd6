//! Learning-rate experiments.
//!
//! [`measure_rate`] fits the estimator with the schedule
//! `lambda_n = c1 / n`, `gamma_n = c2 n^(-1/(2 alpha + d))` on a grid of
//! sample sizes, estimates the excess clipped ALS risk against the known
//! target on fresh Monte Carlo data and fits the log-log slope.
//! [`unbounded_rate_run`] does the same for unbounded responses, clipping the
//! decision function after training at `M_n = 2c (rho_hat + ln n)^l`.
//!
//! Every `(n, repetition)` cell draws from its own random substream, so
//! results are identical whatever the number of threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::ClipLevel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::problems::SyntheticProblem;
use crate::rng::{label, substream};
use crate::solver::{fit_with, FitConfig};
use crate::stats::{mean_and_stderr, ols_slope, std_dev};

pub use crate::problems::synth;

/// Default sample-size grid.
pub const DEFAULT_N_GRID: [usize; 5] = [128, 256, 512, 1024, 2048];

/// Default smoothness used by the schedules.
pub const DEFAULT_ALPHA: f64 = 3.0;

/// Default `c1` in `lambda_n = c1 / n`.
pub const DEFAULT_C1: f64 = 1e-2;

/// Default `c2` in `gamma_n = c2 n^(-1/(2 alpha + d))`.
pub const DEFAULT_C2: f64 = 1.0;

/// Default number of Monte Carlo points per cell.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Aggregated results for one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Mean over successful repetitions of the estimated excess risk.
    pub mean_excess: f64,
    /// Standard deviation of the estimates across repetitions.
    pub std_excess: f64,
    /// Mean Monte Carlo standard error of the per-repetition estimates.
    pub mc_stderr: f64,
    /// Clip level used after training, if a schedule was applied.
    pub clip_level: Option<f64>,
    pub failed_repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub mc_samples: usize,
    pub results: Vec<RateRow>,
    /// Least-squares slope of `ln(mean excess)` on `ln n`; present once the
    /// experiment ran on at least three grid points with positive means.
    pub slope: Option<f64>,
}

impl RateExperiment {
    pub fn new(c1: f64, c2: f64, alpha: f64, d: usize, n_grid: Vec<usize>, repetitions: usize, seed: u64) -> Result<Self> {
        if !(c1 > 0.0 && c1.is_finite() && c2 > 0.0 && c2.is_finite()) {
            return Err(Error::domain(format!("schedule constants must be positive, got c1={c1}, c2={c2}")));
        }
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(Error::domain(format!("alpha must be at least 1, got {alpha}")));
        }
        if d == 0 {
            return Err(Error::domain("dimension must be at least 1"));
        }
        if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("n grid must be nonempty, positive and strictly increasing"));
        }
        if repetitions == 0 {
            return Err(Error::domain("need at least one repetition"));
        }
        Ok(Self {
            c1,
            c2,
            alpha,
            d,
            n_grid,
            repetitions,
            seed,
            mc_samples: DEFAULT_MC_SAMPLES,
            results: Vec::new(),
            slope: None,
        })
    }

    pub fn with_mc_samples(mut self, mc_samples: usize) -> Result<Self> {
        if mc_samples < 2 {
            return Err(Error::domain("need at least two Monte Carlo samples"));
        }
        self.mc_samples = mc_samples;
        Ok(self)
    }

    pub fn lambda_n(&self, n: usize) -> f64 {
        self.c1 / n as f64
    }

    pub fn gamma_n(&self, n: usize) -> f64 {
        self.c2 * (n as f64).powf(-1.0 / (2.0 * self.alpha + self.d as f64))
    }

    /// The exponent `-2 alpha / (2 alpha + d)` of the rate, without log factors.
    pub fn theoretical_slope(&self) -> f64 {
        -2.0 * self.alpha / (2.0 * self.alpha + self.d as f64)
    }

    /// Writes `n,mean_excess,std_excess`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "mean_excess", "std_excess"])?;
        for row in &self.results {
            w.write_record([row.n.to_string(), row.mean_excess.to_string(), row.std_excess.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the whole experiment, including the slope, as JSON.
    pub fn write_summary_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    fn finish(mut self, rows: Vec<RateRow>) -> Self {
        self.slope = fit_slope(&rows);
        self.results = rows;
        self
    }
}

fn fit_slope(rows: &[RateRow]) -> Option<f64> {
    if rows.len() < 3 || rows.iter().any(|r| r.mean_excess.is_nan() || r.mean_excess <= 0.0) {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_excess.ln()).collect();
    ols_slope(&xs, &ys)
}

/// Tail parameters `(c, l, rho_hat)` of `P(|y| <= c rho^l) >= 1 - e^-rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSchedule {
    c: f64,
    l: f64,
    rho_hat: f64,
}

impl TailSchedule {
    pub fn new(c: f64, l: f64, rho_hat: f64) -> Result<Self> {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(Error::domain(format!("c must be at least 1, got {c}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::domain(format!("l must be positive, got {l}")));
        }
        if !(rho_hat >= 1.0 && rho_hat.is_finite()) {
            return Err(Error::domain(format!("rho_hat must be at least 1, got {rho_hat}")));
        }
        Ok(Self { c, l, rho_hat })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn rho_hat(&self) -> f64 {
        self.rho_hat
    }
}

/// `M_n = 2c (rho_hat + ln n)^l`, defined for `n >= 3`.
pub fn clip_schedule(sched: &TailSchedule, n: f64) -> Result<f64> {
    if !(n >= 3.0 && n.is_finite()) {
        return Err(Error::domain(format!("clip schedule needs n >= 3, got {n}")));
    }
    Ok(2.0 * sched.c * (sched.rho_hat + n.ln()).powf(sched.l))
}

struct CellOutcome {
    excess: f64,
    stderr: f64,
}

fn run_cell(
    exp: &RateExperiment,
    problem: &SyntheticProblem,
    n: usize,
    rep: usize,
    clip: Option<f64>,
) -> Result<CellOutcome> {
    let data: Dataset = problem.sample(n, &mut substream(exp.seed, &[label::TRAIN, n as u64, rep as u64]))?;
    let cfg = FitConfig::new(problem.tau().tau(), exp.lambda_n(n), exp.gamma_n(n))?;
    let mut model = fit_with(&data, &cfg)?;
    if let Some(m) = clip {
        model.set_clip_level(Some(ClipLevel::new(m)?));
    }
    let sample = problem.mc_sample(exp.mc_samples, &mut substream(exp.seed, &[label::TEST, n as u64, rep as u64]))?;
    let preds = model.predict_batch(&sample.x, model.clip_level().is_some())?;
    let est = problem.excess_from_predictions(&preds, &sample);
    if !est.mean.is_finite() {
        return Err(Error::Numerical(format!("excess estimate at n={n} is not finite")));
    }
    Ok(CellOutcome { excess: est.mean, stderr: est.stderr })
}

fn run(exp: &RateExperiment, problem: &SyntheticProblem, clips: &[Option<f64>]) -> Result<RateExperiment> {
    if problem.dim() != exp.d {
        return Err(Error::DimensionMismatch { expected: exp.d, got: problem.dim() });
    }
    let cells: Vec<(usize, usize)> = (0..exp.n_grid.len())
        .flat_map(|i| (0..exp.repetitions).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<Result<CellOutcome>> = cells
        .par_iter()
        .map(|&(i, r)| run_cell(exp, problem, exp.n_grid[i], r, clips[i]))
        .collect();

    let mut rows = Vec::with_capacity(exp.n_grid.len());
    let mut outcomes = outcomes.into_iter();
    for (i, &n) in exp.n_grid.iter().enumerate() {
        let mut excess = Vec::new();
        let mut stderrs = Vec::new();
        let mut last_error = None;
        for _ in 0..exp.repetitions {
            match outcomes.next().expect("one outcome per cell") {
                Ok(o) => {
                    excess.push(o.excess);
                    stderrs.push(o.stderr);
                }
                Err(e) => last_error = Some(e),
            }
        }
        if excess.is_empty() {
            return Err(last_error.expect("failed cells carry an error"));
        }
        let (mean, _) = mean_and_stderr(&excess);
        rows.push(RateRow {
            n,
            lambda: exp.lambda_n(n),
            gamma: exp.gamma_n(n),
            mean_excess: mean,
            std_excess: std_dev(&excess),
            mc_stderr: stderrs.iter().sum::<f64>() / stderrs.len() as f64,
            clip_level: clips[i],
            failed_repetitions: exp.repetitions - excess.len(),
        });
    }
    Ok(exp.clone().finish(rows))
}

/// Runs the experiment on `problem`, clipping at the model's default level
/// (the declared response bound, else the largest training `|y|`).
pub fn measure_rate(exp: &RateExperiment, problem: &SyntheticProblem) -> Result<RateExperiment> {
    run(exp, problem, &vec![None; exp.n_grid.len()])
}

/// Like [`measure_rate`], but the decision function is clipped after training
/// at `M_n` from the tail schedule.
pub fn unbounded_rate_run(exp: &RateExperiment, sched: &TailSchedule, problem: &SyntheticProblem) -> Result<RateExperiment> {
    let clips = exp
        .n_grid
        .iter()
        .map(|&n| clip_schedule(sched, n as f64).map(Some))
        .collect::<Result<Vec<_>>>()?;
    run(exp, problem, &clips)
}

/// Excess clipped risk along a `lambda` path for fixed data and `gamma`.
pub fn lambda_path(
    problem: &SyntheticProblem,
    data: &Dataset,
    gamma: f64,
    lambdas: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let sample = problem.mc_sample(mc_samples, &mut substream(seed, &[label::TEST]))?;
    let g = crate::kernel::gram(crate::kernel::GaussianKernel::new(gamma)?, data.x())?;
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = FitConfig::new(problem.tau().tau(), lambda, gamma)?;
            let model = crate::solver::fit_gram(&g, data, &cfg)?;
            let preds = model.predict_batch(&sample.x, model.clip_level().is_some())?;
            Ok((lambda, problem.excess_from_predictions(&preds, &sample).mean))
        })
        .collect()
}
