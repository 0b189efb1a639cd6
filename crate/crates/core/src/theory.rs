//! Numerical checks of the inequalities behind the estimator's learning
//! theory: the calibration sandwich between excess ALS risk and `L2`
//! distance, supremum and variance bounds of the loss difference, the
//! quadratic sandwich of the excess inner risk, the `h(p)` lemma, the
//! maximizer used in the entropy bound, and an empirical oracle envelope.
//!
//! Each check returns a [`BoundReport`]. Checks are also registered by name in
//! a [`CheckRegistry`] so that the command line can run any subset.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::als::{expectile, excess_inner_risk_at, AlsConfig, ClipLevel, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::kernel::{covering_profile, covering_profile_argmax};
use crate::problems::{McSample, ProblemRegistry, ProblemSpec, SyntheticProblem};
use crate::rng::{label, substream};
use crate::solver::{fit_with, FitConfig, RegularizedRisk};
use crate::stats::mean_and_stderr;

/// Default tolerance of a single inequality.
pub const TOLERANCE: f64 = 1e-9;

/// Multiple of the Monte Carlo standard error allowed on stochastic checks.
pub const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDetail {
    pub label: String,
    /// The inequality tested is `lhs <= rhs + tolerance`.
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub holds: bool,
    /// Informational trials are reported but never counted as violations.
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` over the counted trials; nonpositive when every
    /// inequality holds without using its tolerance.
    pub max_slack: f64,
    pub details: Vec<TrialDetail>,
    /// Named quantities estimated along the way.
    pub estimates: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            violations: 0,
            max_slack: f64::NEG_INFINITY,
            details: Vec::new(),
            estimates: BTreeMap::new(),
        }
    }

    /// Records `lhs <= rhs + tolerance`.
    pub fn assert_le(&mut self, label: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> bool {
        let holds = lhs <= rhs + tolerance;
        self.trials += 1;
        if !holds {
            self.violations += 1;
        }
        self.max_slack = self.max_slack.max(lhs - rhs);
        self.details.push(TrialDetail {
            label: label.into(),
            lhs,
            rhs,
            tolerance,
            holds,
            informational: false,
        });
        holds
    }

    /// Records an inequality for information only.
    pub fn note_le(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        self.details.push(TrialDetail {
            label: label.into(),
            lhs,
            rhs,
            tolerance: 0.0,
            holds: lhs <= rhs,
            informational: true,
        });
    }

    pub fn estimate(&mut self, key: impl Into<String>, value: f64) {
        self.estimates.insert(key.into(), value);
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Sums counters and concatenates details of `other` into `self`.
    pub fn absorb(&mut self, other: BoundReport) {
        let prefix = other.name.clone();
        self.trials += other.trials;
        self.violations += other.violations;
        self.max_slack = self.max_slack.max(other.max_slack);
        self.details.extend(other.details.into_iter().map(|mut d| {
            d.label = format!("{prefix}/{}", d.label);
            d
        }));
        for (k, v) in other.estimates {
            self.estimates.insert(format!("{prefix}/{k}"), v);
        }
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

fn ensure_mc_samples(mc_samples: usize) -> Result<()> {
    if mc_samples < 1000 {
        return Err(Error::domain(format!("Monte Carlo checks need at least 1000 samples, got {mc_samples}")));
    }
    Ok(())
}

fn paired_terms(problem: &SyntheticProblem, f: &dyn Fn(&[f64]) -> f64, sample: &McSample) -> Result<(Vec<f64>, Vec<f64>)> {
    let tau = problem.tau();
    let mut dist2 = Vec::with_capacity(sample.y.len());
    let mut excess = Vec::with_capacity(sample.y.len());
    for ((x, &y), &t) in sample.x.rows().zip(&sample.y).zip(&sample.target) {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::Numerical(format!("decision function is not finite at {x:?}")));
        }
        dist2.push((v - t) * (v - t));
        excess.push(tau.loss_difference(y, v, t));
    }
    Ok((dist2, excess))
}

/// Monte Carlo check of
/// `C^-1/2 (excess)^1/2 <= |f - f*|_L2 <= c^-1/2 (excess)^1/2`,
/// with `c = min{tau, 1-tau}` and `C = max{tau, 1-tau}`.
///
/// Both sides come from one sample, tested in squared form through the paired
/// per-sample terms `excess_i - C d_i^2 <= 0` and `c d_i^2 - excess_i <= 0`,
/// each at three standard errors. At `tau = 1/2` the sandwich collapses and
/// `|f - f*|^2 = 2 excess` is tested the same way.
pub fn check_calibration(
    problem: &SyntheticProblem,
    f: &dyn Fn(&[f64]) -> f64,
    mc_samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    ensure_mc_samples(mc_samples)?;
    let tau = problem.tau();
    let mut rng = substream(seed, &[label::TEST]);
    let sample = problem.mc_sample(mc_samples, &mut rng)?;
    let (dist2, excess) = paired_terms(problem, f, &sample)?;

    let (l2sq, _) = mean_and_stderr(&dist2);
    let (ex, ex_se) = mean_and_stderr(&excess);
    if !(l2sq.is_finite() && ex.is_finite()) {
        return Err(Error::Numerical("calibration estimates are not finite".into()));
    }
    let mut report = BoundReport::new(format!("calibration(tau={})", tau.tau()));
    report.estimate("l2_distance", l2sq.sqrt());
    report.estimate("excess_risk", ex);
    report.estimate("excess_risk_stderr", ex_se);

    let lower: Vec<f64> = excess.iter().zip(&dist2).map(|(e, d)| e - tau.max_weight() * d).collect();
    let upper: Vec<f64> = excess.iter().zip(&dist2).map(|(e, d)| tau.min_weight() * d - e).collect();
    let (lm, lse) = mean_and_stderr(&lower);
    let (um, use_) = mean_and_stderr(&upper);
    report.assert_le("excess <= C |f-f*|^2", lm, 0.0, MC_SIGMAS * lse + TOLERANCE);
    report.assert_le("c |f-f*|^2 <= excess", um, 0.0, MC_SIGMAS * use_ + TOLERANCE);
    if tau.tau() == 0.5 {
        let gap: Vec<f64> = dist2.iter().zip(&excess).map(|(d, e)| d - 2.0 * e).collect();
        let (gm, gse) = mean_and_stderr(&gap);
        report.estimate("equality_gap", gm);
        report.assert_le("| |f-f*|^2 - 2 excess |", gm.abs(), 0.0, MC_SIGMAS * gse + TOLERANCE);
    }
    Ok(report)
}

/// Monte Carlo check of the supremum bound
/// `|L(y, f(x)) - L(y, f*(x))| <= 4 C M^2` (every sample) and the variance
/// bound `E (L o f - L o f*)^2 <= 16 C^2 c^-1 M^2 (excess)` (paired, three
/// standard errors). Requires `|y| <= M` and `|f| <= M`.
pub fn check_variance_bound(
    problem: &SyntheticProblem,
    f: &dyn Fn(&[f64]) -> f64,
    level: ClipLevel,
    mc_samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    ensure_mc_samples(mc_samples)?;
    let m = level.value();
    match problem.response_bound() {
        Some(b) if b <= m => {}
        other => {
            return Err(Error::domain(format!(
                "variance bound needs |y| <= M = {m}, problem bound is {other:?}"
            )))
        }
    }
    let tau = problem.tau();
    let mut rng = substream(seed, &[label::TEST]);
    let sample = problem.mc_sample(mc_samples, &mut rng)?;
    if let Some(y) = sample.y.iter().find(|y| y.abs() > m) {
        return Err(Error::domain(format!("sampled response {y} exceeds M = {m}")));
    }
    let mut values = Vec::with_capacity(mc_samples);
    for x in sample.x.rows() {
        let v = f(x);
        if !(v.is_finite() && v.abs() <= m) {
            return Err(Error::domain(format!("decision value {v} outside [-M, M]")));
        }
        values.push(v);
    }
    let diffs: Vec<f64> = values
        .iter()
        .zip(sample.y.iter().zip(&sample.target))
        .map(|(&v, (&y, &t))| tau.loss_difference(y, v, t))
        .collect();

    let mut report = BoundReport::new(format!("variance(tau={}, M={m})", tau.tau()));
    let sup_bound = 4.0 * tau.max_weight() * m * m;
    let observed_sup = diffs.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    report.assert_le("sup |L o f - L o f*| <= 4 C M^2", observed_sup, sup_bound, TOLERANCE);

    let factor = 16.0 * tau.max_weight().powi(2) / tau.min_weight() * m * m;
    let paired: Vec<f64> = diffs.iter().map(|d| d * d - factor * d).collect();
    let (pm, pse) = mean_and_stderr(&paired);
    let (ex, _) = mean_and_stderr(&diffs);
    let second: f64 = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
    report.estimate("excess_risk", ex);
    report.estimate("second_moment", second);
    report.estimate("second_moment_bound", factor * ex);
    report.assert_le("E(L o f - L o f*)^2 <= 16 C^2/c M^2 excess", pm, 0.0, MC_SIGMAS * pse + TOLERANCE);
    Ok(report)
}

/// Randomized check of `c (t - t*)^2 <= excess inner risk <= C (t - t*)^2` on
/// discrete distributions with 2 to 10 atoms in `[-1, 1]`, random `tau` and
/// random `t` in `[-2, 2]`. Exact arithmetic up to round-off; tolerance `1e-12`.
pub fn check_inner_risk_sandwich(trials: usize, seed: u64) -> Result<BoundReport> {
    if trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let tol = 1e-12;
    let mut report = BoundReport::new("inner-risk-sandwich");
    let mut worst_lower = f64::NEG_INFINITY;
    let mut worst_upper = f64::NEG_INFINITY;
    let mut failures = 0usize;
    for trial in 0..trials {
        let mut rng = substream(seed, &[label::TRIAL, trial as u64]);
        let atoms = rng.random_range(2..=10usize);
        let raw: Vec<(f64, f64)> = (0..atoms)
            .map(|_| (rng.random_range(-1.0..=1.0), rng.random_range(0.01..1.0)))
            .collect();
        let total: f64 = raw.iter().map(|r| r.1).sum();
        let q = DiscreteDistribution::new(raw.into_iter().map(|(v, m)| (v, m / total)))?;
        let tau = AlsConfig::new(rng.random_range(0.001..0.999))?;
        let star = expectile(&q, tau);
        // Every 100th trial probes the minimizer itself.
        let t = if trial % 100 == 0 { star } else { rng.random_range(-2.0..=2.0) };
        let e = excess_inner_risk_at(&q, tau, t, star);
        let d2 = (t - star) * (t - star);
        let lower = tau.min_weight() * d2 - e;
        let upper = e - tau.max_weight() * d2;
        worst_lower = worst_lower.max(lower);
        worst_upper = worst_upper.max(upper);
        let ok = lower <= tol && upper <= tol;
        report.trials += 1;
        report.max_slack = report.max_slack.max(lower.max(upper));
        if !ok {
            failures += 1;
            report.details.push(TrialDetail {
                label: format!("trial {trial}: tau={} t={t} t*={star}", tau.tau()),
                lhs: lower.max(upper),
                rhs: 0.0,
                tolerance: tol,
                holds: false,
                informational: false,
            });
        }
    }
    report.violations = failures;
    report.estimate("worst_lower_gap", worst_lower);
    report.estimate("worst_upper_gap", worst_upper);
    Ok(report)
}

/// `h(p) = ((sqrt 2 - 1) / (sqrt 2 - 2^((2p-1)/(2p))))^p` on `(0, 1/2]`.
pub fn hp(p: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    ((s - 1.0) / (s - 2f64.powf((2.0 * p - 1.0) / (2.0 * p)))).powf(p)
}

/// Evaluates `h` on the uniform grid `k / (2N)`, `k = 1..=N`, and checks
/// `h(1/2) = 1` exactly, `sup h <= 1 + 1e-9`, and midpoint convexity on every
/// consecutive triple.
pub fn check_hp_lemma(grid_points: usize) -> Result<BoundReport> {
    if grid_points < 100 {
        return Err(Error::domain(format!("h(p) grid needs at least 100 points, got {grid_points}")));
    }
    let values: Vec<f64> = (1..=grid_points)
        .map(|k| hp(k as f64 / (2 * grid_points) as f64))
        .collect();
    let mut report = BoundReport::new("hp-lemma");
    let at_half = hp(0.5);
    report.assert_le("|h(1/2) - 1|", (at_half - 1.0).abs(), 0.0, 0.0);
    let sup = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.estimate("grid_sup", sup);
    report.assert_le("sup h <= 1", sup, 1.0, TOLERANCE);
    let mut convexity_failures = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for w in values.windows(3) {
        let gap = w[1] - 0.5 * (w[0] + w[2]);
        worst = worst.max(gap);
        if gap > 1e-12 {
            convexity_failures += 1;
        }
    }
    report.estimate("worst_midpoint_gap", worst);
    report.assert_le("midpoint convexity violations", convexity_failures as f64, 0.0, 0.0);
    Ok(report)
}

/// Compares the closed-form maximizer `eps* = exp(-(d+1)/p)` of
/// `eps^p (log 1/eps)^(d+1)` with a grid search over `eps in (0, 1/2)`.
///
/// The grid is uniform in `u = log(1/eps)` on `(log 2, 4 (d+1)/p]`; agreement
/// means the grid argmax lies within one grid step of `u*` and no grid value
/// exceeds the closed-form maximum.
pub fn check_entropy_maximizer(ps: &[f64], ds: &[u32], grid_points: usize) -> Result<BoundReport> {
    if grid_points < 10 {
        return Err(Error::domain("maximizer grid needs at least 10 points"));
    }
    let mut report = BoundReport::new("entropy-maximizer");
    for &p in ps {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("p must lie in (0, 1), got {p}")));
        }
        for &d in ds {
            let u_star = (f64::from(d) + 1.0) / p;
            let (u_lo, u_hi) = (2f64.ln(), 4.0 * u_star);
            let step = (u_hi - u_lo) / grid_points as f64;
            let (mut best_u, mut best_v) = (u_lo, f64::NEG_INFINITY);
            for k in 1..=grid_points {
                let u = u_lo + step * k as f64;
                let v = covering_profile(p, d, (-u).exp());
                if v > best_v {
                    best_v = v;
                    best_u = u;
                }
            }
            let closed = covering_profile_argmax(p, d);
            let closed_value = covering_profile(p, d, closed);
            report.assert_le(
                format!("p={p} d={d}: |u_grid - u*| <= step"),
                (best_u - u_star).abs(),
                step,
                1e-12 * u_star,
            );
            report.assert_le(
                format!("p={p} d={d}: grid max <= profile(eps*)"),
                best_v,
                closed_value,
                1e-12 * closed_value,
            );
            report.estimate(format!("eps_star(p={p},d={d})"), closed);
            report.estimate(format!("eps_grid(p={p},d={d})"), (-best_u).exp());
        }
    }
    Ok(report)
}

/// Schedule for the oracle-envelope check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConfig {
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub n_grid: Vec<usize>,
    pub mc_samples: usize,
    pub seed: u64,
}

/// `lambda gamma^-d + gamma^(2 alpha) + (log 1/lambda)^(d+1) gamma^-d / n + rho / n`
/// with `rho = 1`.
pub fn oracle_envelope(lambda: f64, gamma: f64, n: usize, alpha: f64, d: usize) -> f64 {
    let d = d as f64;
    let n = n as f64;
    lambda * gamma.powf(-d) + gamma.powf(2.0 * alpha) + (1.0 / lambda).ln().powf(d + 1.0) * gamma.powf(-d) / n + 1.0 / n
}

/// Fits with `lambda_n = c1 / n`, `gamma_n = c2 n^(-1/(2 alpha + d))` at each
/// `n`, estimates the clipped excess risk, fits the envelope constant at the
/// smallest `n` and reports whether later points stay under it
/// (informational). Hard assertion: the excess is nonincreasing in `n` up to
/// twice the combined Monte Carlo standard error.
pub fn check_oracle_envelope(problem: &SyntheticProblem, cfg: &EnvelopeConfig) -> Result<BoundReport> {
    ensure_mc_samples(cfg.mc_samples)?;
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("n grid must be nonempty and strictly increasing"));
    }
    let d = problem.dim();
    let m = problem.response_bound().unwrap_or_else(|| problem.target_bound().max(1.0));
    let mut report = BoundReport::new("oracle-envelope");
    let mut points: Vec<(usize, f64, f64, f64)> = Vec::new();
    for &n in &cfg.n_grid {
        let lambda = cfg.c1 / n as f64;
        let gamma = cfg.c2 * (n as f64).powf(-1.0 / (2.0 * cfg.alpha + d as f64));
        let data = problem.sample(n, &mut substream(cfg.seed, &[label::TRAIN, n as u64]))?;
        let fit_cfg = FitConfig::new(problem.tau().tau(), lambda, gamma)?;
        let model = fit_with(&data, &fit_cfg)?;
        let sample = problem.mc_sample(cfg.mc_samples, &mut substream(cfg.seed, &[label::TEST, n as u64]))?;
        let preds = match model.clip_level() {
            Some(_) => model.predict_batch(&sample.x, true)?,
            None => model.predict_batch(&sample.x, false)?,
        };
        let est = problem.excess_from_predictions(&preds, &sample);
        let env = m * m * oracle_envelope(lambda, gamma, n, cfg.alpha, d);
        report.estimate(format!("excess(n={n})"), est.mean);
        report.estimate(format!("envelope(n={n})"), env);
        points.push((n, est.mean, est.stderr, env));
    }
    let (_, e0, _, env0) = points[0];
    let constant = (e0.max(0.0)) / env0;
    report.estimate("fitted_constant", constant);
    for &(n, e, _, env) in &points {
        report.note_le(format!("n={n}: excess <= C envelope"), e, constant * env);
    }
    for w in points.windows(2) {
        let (n0, e0, s0, _) = w[0];
        let (n1, e1, s1, _) = w[1];
        let noise = 2.0 * (s0 * s0 + s1 * s1).sqrt();
        report.assert_le(format!("excess(n={n1}) <= excess(n={n0})"), e1, e0, noise + TOLERANCE);
    }
    Ok(report)
}

/// Settings shared by the registered checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyContext {
    pub seed: u64,
    pub mc_samples: usize,
    pub trials: usize,
    pub grid_points: usize,
}

impl Default for VerifyContext {
    fn default() -> Self {
        Self { seed: 0, mc_samples: 100_000, trials: 10_000, grid_points: 10_000 }
    }
}

/// A named verification that produces a [`BoundReport`].
pub trait Check: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport>;
}

struct InnerRiskSandwich;

impl Check for InnerRiskSandwich {
    fn name(&self) -> &'static str {
        "inner-risk-sandwich"
    }

    fn description(&self) -> &'static str {
        "quadratic sandwich of the excess inner risk on random discrete distributions"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport> {
        check_inner_risk_sandwich(ctx.trials, ctx.seed)
    }
}

struct TwoPointExpectile;

impl Check for TwoPointExpectile {
    fn name(&self) -> &'static str {
        "two-point-expectile"
    }

    fn description(&self) -> &'static str {
        "expectile of (delta_0 + delta_1)/2 equals tau"
    }

    fn run(&self, _ctx: &VerifyContext) -> Result<BoundReport> {
        let q = DiscreteDistribution::uniform(&[0.0, 1.0])?;
        let mut report = BoundReport::new(self.name());
        for k in 1..=19 {
            let tau = k as f64 * 0.05;
            let e = expectile(&q, AlsConfig::new(tau)?);
            report.assert_le(format!("tau={tau:.2}"), (e - tau).abs(), 0.0, 1e-10);
        }
        Ok(report)
    }
}

struct HpLemma;

impl Check for HpLemma {
    fn name(&self) -> &'static str {
        "hp-lemma"
    }

    fn description(&self) -> &'static str {
        "convexity of h(p) on (0, 1/2] with h(1/2) = 1 = sup h"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport> {
        check_hp_lemma(ctx.grid_points)
    }
}

struct EntropyMaximizer;

impl Check for EntropyMaximizer {
    fn name(&self) -> &'static str {
        "entropy-maximizer"
    }

    fn description(&self) -> &'static str {
        "closed-form maximizer of eps^p (log 1/eps)^(d+1) against a grid search"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport> {
        check_entropy_maximizer(&[0.2, 0.5, 0.8], &[1, 2, 3], ctx.grid_points.max(10))
    }
}

/// Fits a small model on `problem` to serve as a non-trivial decision function.
fn reference_model(problem: &SyntheticProblem, seed: u64) -> Result<crate::solver::ExpectileModel> {
    let data = problem.sample(200, &mut substream(seed, &[label::TRAIN, 200]))?;
    fit_with(&data, &FitConfig::new(problem.tau().tau(), 1e-3, 0.3)?)
}

struct Calibration;

impl Check for Calibration {
    fn name(&self) -> &'static str {
        "calibration"
    }

    fn description(&self) -> &'static str {
        "calibration sandwich at tau in {0.1, 0.5, 0.9} for f* + 0.1 and a fitted model"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport> {
        let mut report = BoundReport::new(self.name());
        let registry = ProblemRegistry::builtin();
        for tau in [0.1, 0.5, 0.9] {
            let problem = registry.build("gauss-noise", &ProblemSpec::new(tau, 1))?;
            let shifted = |x: &[f64]| problem.target(x) + 0.1;
            let mut r = check_calibration(&problem, &shifted, ctx.mc_samples, ctx.seed)?;
            r.name = format!("tau={tau}/shifted");
            report.absorb(r);
            let model = reference_model(&problem, ctx.seed)?;
            let fitted = |x: &[f64]| model.predict(x).unwrap_or(f64::NAN);
            let mut r = check_calibration(&problem, &fitted, ctx.mc_samples, ctx.seed)?;
            r.name = format!("tau={tau}/fitted");
            report.absorb(r);
        }
        Ok(report)
    }
}

struct VarianceBound;

impl Check for VarianceBound {
    fn name(&self) -> &'static str {
        "variance-bound"
    }

    fn description(&self) -> &'static str {
        "supremum and second-moment bounds on a bounded problem (M = 1)"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport> {
        let mut report = BoundReport::new(self.name());
        let registry = ProblemRegistry::builtin();
        let level = ClipLevel::new(1.0)?;
        for tau in [0.5, 0.9] {
            let problem = registry.build("bounded-noise", &ProblemSpec::new(tau, 1))?;
            let shifted = |x: &[f64]| level.apply(problem.target(x) + 0.5);
            let mut r = check_variance_bound(&problem, &shifted, level, ctx.mc_samples, ctx.seed)?;
            r.name = format!("tau={tau}/shifted");
            report.absorb(r);
            let mut model = reference_model(&problem, ctx.seed)?;
            model.set_clip_level(Some(level));
            let fitted = |x: &[f64]| model.predict_clipped(x).unwrap_or(f64::NAN);
            let mut r = check_variance_bound(&problem, &fitted, level, ctx.mc_samples, ctx.seed)?;
            r.name = format!("tau={tau}/fitted");
            report.absorb(r);
        }
        Ok(report)
    }
}

struct SolverOptimality;

impl Check for SolverOptimality {
    fn name(&self) -> &'static str {
        "solver-optimality"
    }

    fn description(&self) -> &'static str {
        "gradient norm, random perturbations and monotone objective of fitted models"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport> {
        let mut report = BoundReport::new(self.name());
        let registry = ProblemRegistry::builtin();
        for (i, &tau) in [0.1, 0.5, 0.9].iter().enumerate() {
            let problem = registry.build("gauss-noise", &ProblemSpec::new(tau, 2))?;
            let data = problem.sample(60, &mut substream(ctx.seed, &[label::TRAIN, i as u64]))?;
            let cfg = FitConfig::new(tau, 1e-3, 0.5)?;
            let model = fit_with(&data, &cfg)?;
            let r = solver_optimality_report(&model, &data, 1000, ctx.seed)?;
            report.absorb(BoundReport { name: format!("tau={tau}"), ..r });
        }
        Ok(report)
    }
}

/// Checks a fitted model for stationarity (`|grad J| <= 1e-8 (1 + |y|_inf)`),
/// local optimality against `perturbations` random directions of norm at most
/// `1e-2`, and a nonincreasing objective history.
pub fn solver_optimality_report(
    model: &crate::solver::ExpectileModel,
    data: &crate::data::Dataset,
    perturbations: usize,
    seed: u64,
) -> Result<BoundReport> {
    let g = crate::kernel::gram(model.kernel(), data.x())?;
    let objective = RegularizedRisk::new(&g, data.y(), model.tau(), model.lambda());
    let c = model.coefficients();
    let mut report = BoundReport::new("solver-optimality");
    let grad_norm = objective.gradient(c).iter().map(|v| v * v).sum::<f64>().sqrt();
    report.assert_le("gradient norm", grad_norm, 1e-8 * (1.0 + data.max_abs_response()), 0.0);
    let base = objective.value(c);
    let mut rng = substream(seed, &[label::TRIAL, 0x0b7]);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..perturbations {
        let dir: Vec<f64> = (0..c.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let radius = 1e-2 * rng.random::<f64>();
        let trial: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + radius * b / norm).collect();
        worst = worst.max(base - objective.value(&trial));
    }
    report.assert_le("J(c*) - min J(c* + delta)", worst, 0.0, 1e-12 * (1.0 + base.abs()));
    let history = &model.diagnostics().objective_history;
    let rises = history.windows(2).filter(|w| w[1] > w[0]).count();
    report.assert_le("objective increases", rises as f64, 0.0, 0.0);
    report.estimate("objective", base);
    report.estimate("gradient_norm", grad_norm);
    Ok(report)
}

struct OracleEnvelope;

impl Check for OracleEnvelope {
    fn name(&self) -> &'static str {
        "oracle-envelope"
    }

    fn description(&self) -> &'static str {
        "excess risk decay under the rate schedule with a fitted envelope constant"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<BoundReport> {
        let problem = ProblemRegistry::builtin().build("noiseless-sine", &ProblemSpec::new(0.5, 1))?;
        let cfg = EnvelopeConfig {
            alpha: 3.0,
            c1: 1e-3,
            c2: 1.0,
            n_grid: vec![64, 128, 256, 512],
            mc_samples: ctx.mc_samples.clamp(1000, 20_000),
            seed: ctx.seed,
        };
        check_oracle_envelope(&problem, &cfg)
    }
}

/// Checks selectable by name.
pub struct CheckRegistry {
    checks: Vec<Box<dyn Check>>,
}

impl CheckRegistry {
    pub fn empty() -> Self {
        Self { checks: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(InnerRiskSandwich));
        r.register(Box::new(TwoPointExpectile));
        r.register(Box::new(HpLemma));
        r.register(Box::new(EntropyMaximizer));
        r.register(Box::new(Calibration));
        r.register(Box::new(VarianceBound));
        r.register(Box::new(SolverOptimality));
        r.register(Box::new(OracleEnvelope));
        r
    }

    pub fn register(&mut self, check: Box<dyn Check>) {
        self.checks.retain(|c| c.name() != check.name());
        self.checks.push(check);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Check> {
        self.checks
            .iter()
            .find(|c| c.name() == name)
            .map(|c| c.as_ref())
            .ok_or_else(|| Error::Unknown { kind: "check", name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.checks.iter().map(|c| c.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Check> {
        self.checks.iter().map(|c| c.as_ref())
    }
}

impl Default for CheckRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(kind: &str, tau: f64) -> SyntheticProblem {
        ProblemRegistry::builtin().build(kind, &ProblemSpec::new(tau, 1)).unwrap()
    }

    #[test]
    fn calibration_of_target_is_exactly_zero() {
        let p = problem("gauss-noise", 0.9);
        let r = check_calibration(&p, &|x| p.target(x), 1000, 1).unwrap();
        assert!(r.passed());
        assert_eq!(r.estimates["l2_distance"], 0.0);
        assert_eq!(r.estimates["excess_risk"], 0.0);
    }

    #[test]
    fn calibration_shifted_target() {
        for tau in [0.1, 0.5, 0.9] {
            let p = problem("gauss-noise", tau);
            let r = check_calibration(&p, &|x| p.target(x) + 0.1, 20_000, 2).unwrap();
            assert!(r.passed(), "{r:?}");
            assert!((r.estimates["l2_distance"] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_rejects_small_samples() {
        let p = problem("gauss-noise", 0.5);
        assert!(check_calibration(&p, &|x| p.target(x), 10, 0).is_err());
    }

    #[test]
    fn variance_bound_cases() {
        let p = problem("bounded-noise", 0.5);
        let level = ClipLevel::new(1.0).unwrap();
        let r = check_variance_bound(&p, &|x| p.target(x), level, 1000, 0).unwrap();
        assert!(r.passed());
        assert_eq!(r.estimates["second_moment"], 0.0);
        let r = check_variance_bound(&p, &|x| level.apply(p.target(x) + 0.5), level, 10_000, 0).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn variance_bound_rejects_unbounded_problem_and_large_f() {
        let level = ClipLevel::new(1.0).unwrap();
        let g = problem("gauss-noise", 0.5);
        assert!(check_variance_bound(&g, &|_| 0.0, level, 1000, 0).is_err());
        let b = problem("bounded-noise", 0.5);
        assert!(check_variance_bound(&b, &|_| 2.0, level, 1000, 0).is_err());
    }

    #[test]
    fn sandwich_small_run() {
        let r = check_inner_risk_sandwich(500, 3).unwrap();
        assert_eq!(r.trials, 500);
        assert!(r.passed(), "{:?}", r.details);
    }

    #[test]
    fn hp_values() {
        assert_eq!(hp(0.5), 1.0);
        assert!(hp(0.25) < 1.0);
        assert!(hp(1e-6) < 1.0 && hp(1e-6) > 0.99);
        let r = check_hp_lemma(1000).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(check_hp_lemma(10).is_err());
    }

    #[test]
    fn maximizer_grid_agrees() {
        let r = check_entropy_maximizer(&[0.2, 0.5, 0.8], &[1, 2, 3], 20_000).unwrap();
        assert_eq!(r.trials, 18);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn envelope_single_point_and_zero_problem() {
        let p = problem("noiseless-sine", 0.5);
        let cfg = EnvelopeConfig { alpha: 3.0, c1: 1e-3, c2: 1.0, n_grid: vec![32], mc_samples: 1000, seed: 0 };
        let r = check_oracle_envelope(&p, &cfg).unwrap();
        assert!(r.passed());
        assert!(r.details.iter().all(|d| d.informational));

        let z = problem("zero", 0.5);
        let cfg = EnvelopeConfig { n_grid: vec![16, 32, 64], ..cfg };
        let r = check_oracle_envelope(&z, &cfg).unwrap();
        assert!(r.passed());
        for n in [16, 32, 64] {
            assert_eq!(r.estimates[&format!("excess(n={n})")], 0.0);
        }
    }

    #[test]
    fn registry_has_default_suite() {
        let reg = CheckRegistry::builtin();
        for name in ["inner-risk-sandwich", "hp-lemma", "entropy-maximizer", "calibration", "variance-bound"] {
            assert!(reg.get(name).is_ok());
        }
        assert!(reg.get("bogus").is_err());
    }

    #[test]
    fn report_json() {
        let r = check_hp_lemma(100).unwrap();
        let mut buf = Vec::new();
        r.to_json(&mut buf).unwrap();
        let back: BoundReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back.trials, r.trials);
        assert_eq!(back.violations, 0);
    }
}
