//! Regularized empirical ALS-risk minimization over the Gaussian RKHS.
//!
//! By the representer theorem the minimizer of
//! `lambda |f|_H^2 + (1/n) sum_i L(y_i, f(x_i))` is `f = sum_i c_i k(x_i, .)`,
//! so the problem reduces to minimizing
//!
//! ```text
//! J(c) = lambda c'Gc + (1/n) sum_i L(y_i, (Gc)_i)
//! ```
//!
//! over `c in R^n`. The loss is piecewise quadratic, so on a fixed sign
//! pattern of the residuals `J` is a quadratic whose minimizer solves the
//! weighted kernel-ridge system `(G + n lambda W^-1) c = y` with
//! `W = diag(w_i)`, `w_i = tau` for nonnegative residuals and `1 - tau`
//! otherwise. Iterating that solve (asymmetric IRLS) is Newton's method on
//! `J`; a halving line search keeps the objective sequence nonincreasing.

use std::io::{Read, Write};
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{AlsConfig, ClipLevel};
use crate::data::{Dataset, Points};
use crate::error::{Error, Result};
use crate::kernel::{gram, GaussianKernel, GramMatrix};

const MAX_HALVINGS: usize = 30;
const RELATIVE_DECREASE_TOL: f64 = 1e-12;
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The residual sign pattern reproduced itself after a full step.
    PatternRepeated,
    /// Relative objective decrease fell below `1e-12`.
    StalledObjective,
    /// Still iterating, or the iteration limit was reached.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    /// `J` at the start and after every outer iteration.
    pub objective_history: Vec<f64>,
    pub stop_reason: StopReason,
    /// Diagonal jitter that was needed to factor the last system (0 if none).
    pub jitter: f64,
    /// Set when the kernel width exceeds 1, outside the range the learning
    /// theory covers.
    pub wide_kernel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub tau: AlsConfig,
    pub lambda: f64,
    pub kernel: GaussianKernel,
    /// Defaults to the dataset's declared bound, else `max |y_i|`.
    pub clip_level: Option<ClipLevel>,
    pub max_iterations: usize,
}

impl FitConfig {
    pub fn new(tau: f64, lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            tau: AlsConfig::new(tau)?,
            lambda,
            kernel: GaussianKernel::new(gamma)?,
            clip_level: None,
            max_iterations: 200,
        })
    }

    pub fn with_clip_level(mut self, level: ClipLevel) -> Self {
        self.clip_level = Some(level);
        self
    }
}

/// The regularized empirical risk `J` as a function of the coefficient vector.
pub struct RegularizedRisk<'a> {
    gram: &'a GramMatrix,
    y: &'a [f64],
    tau: AlsConfig,
    lambda: f64,
}

impl<'a> RegularizedRisk<'a> {
    pub fn new(gram: &'a GramMatrix, y: &'a [f64], tau: AlsConfig, lambda: f64) -> Self {
        Self { gram, y, tau, lambda }
    }

    /// `J(c)`, given `fitted = G c`.
    fn value_with(&self, c: &[f64], fitted: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let penalty: f64 = c.iter().zip(fitted).map(|(a, b)| a * b).sum();
        let risk: f64 = self.y.iter().zip(fitted).map(|(&y, &f)| self.tau.loss(y, f)).sum();
        self.lambda * penalty + risk / n
    }

    pub fn value(&self, c: &[f64]) -> f64 {
        self.value_with(c, &self.gram.mul_vec(c))
    }

    /// `grad J(c) = 2 G (lambda c - W r / n)` with `r = y - G c`.
    pub fn gradient(&self, c: &[f64]) -> Vec<f64> {
        let fitted = self.gram.mul_vec(c);
        self.gradient_with(c, &fitted)
    }

    fn gradient_with(&self, c: &[f64], fitted: &[f64]) -> Vec<f64> {
        let n = self.y.len() as f64;
        let inner: Vec<f64> = c
            .iter()
            .zip(self.y.iter().zip(fitted))
            .map(|(&ci, (&y, &f))| {
                let r = y - f;
                self.lambda * ci - self.tau.weight(r) * r / n
            })
            .collect();
        self.gram.mul_vec(&inner).into_iter().map(|v| 2.0 * v).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `true` where the residual sits on the `tau` branch (`y >= f`).
fn sign_pattern(y: &[f64], fitted: &[f64]) -> Vec<bool> {
    y.iter().zip(fitted).map(|(y, f)| y - f >= 0.0).collect()
}

/// Solves `(G + n lambda W^-1) c = y` by Cholesky with one step of iterative
/// refinement. Returns the solution and the jitter that was added.
fn solve_weighted_system(g: &GramMatrix, y: &[f64], diag: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let base = g.entries();
    let scale = g.trace() / n as f64;
    let mut jitter = 0.0;
    loop {
        let a = Mat::<f64>::from_fn(n, n, |i, j| {
            if i == j {
                base[(i, j)] + diag[i] + jitter
            } else {
                base[(i, j)]
            }
        });
        if let Ok(llt) = a.llt(Side::Lower) {
            let rhs = Mat::<f64>::from_fn(n, 1, |i, _| y[i]);
            let sol = llt.solve(&rhs);
            let mut c: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
            // One refinement step against the unjittered system.
            let gc = g.mul_vec(&c);
            let resid = Mat::<f64>::from_fn(n, 1, |i, _| y[i] - gc[i] - diag[i] * c[i]);
            let corr = llt.solve(&resid);
            let refined: Vec<f64> = (0..n).map(|i| c[i] + corr[(i, 0)]).collect();
            if refined.iter().all(|v| v.is_finite()) {
                c = refined;
            }
            if c.iter().all(|v| v.is_finite()) {
                return Ok((c, jitter));
            }
        }
        jitter = if jitter == 0.0 { JITTER_START * scale } else { jitter * 10.0 };
        if jitter > JITTER_MAX * scale * (1.0 + 1e-9) {
            return Err(Error::Numerical(
                "weighted kernel system is not positive definite even after jitter 1e-6".into(),
            ));
        }
    }
}

/// Fits with the given hyperparameters and default options.
pub fn fit(data: &Dataset, tau: f64, lambda: f64, gamma: f64) -> Result<ExpectileModel> {
    fit_with(data, &FitConfig::new(tau, lambda, gamma)?)
}

pub fn fit_with(data: &Dataset, cfg: &FitConfig) -> Result<ExpectileModel> {
    let g = gram(cfg.kernel, data.x())?;
    fit_gram(&g, data, cfg)
}

/// Fits on a precomputed Gram matrix of `data`'s covariates. The Gram matrix
/// must have been built with `cfg.kernel`.
pub fn fit_gram(g: &GramMatrix, data: &Dataset, cfg: &FitConfig) -> Result<ExpectileModel> {
    let n = data.len();
    if g.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: g.len() });
    }
    let y = data.y();
    let tau = cfg.tau;
    let objective = RegularizedRisk::new(g, y, tau, cfg.lambda);
    let n_lambda = n as f64 * cfg.lambda;

    let mut c = vec![0.0; n];
    let mut fitted = vec![0.0; n];
    let mut current = objective.value_with(&c, &fitted);
    let mut history = vec![current];
    let mut pattern = sign_pattern(y, &fitted);
    let mut stop_reason = StopReason::IterationLimit;
    let mut jitter = 0.0;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let diag: Vec<f64> = pattern
            .iter()
            .map(|&upper| n_lambda / if upper { tau.tau() } else { 1.0 - tau.tau() })
            .collect();
        let (proposal, used_jitter) = solve_weighted_system(g, y, &diag)?;
        jitter = used_jitter;
        let proposal_fitted = g.mul_vec(&proposal);
        let proposal_value = objective.value_with(&proposal, &proposal_fitted);

        let mut full_step = true;
        let (next, next_fitted, next_value) = if proposal_value <= current {
            (proposal, proposal_fitted, proposal_value)
        } else {
            full_step = false;
            let mut accepted = None;
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                t *= 0.5;
                let trial: Vec<f64> = c.iter().zip(&proposal).map(|(a, b)| a + t * (b - a)).collect();
                let trial_fitted = g.mul_vec(&trial);
                let v = objective.value_with(&trial, &trial_fitted);
                if v <= current {
                    accepted = Some((trial, trial_fitted, v));
                    break;
                }
            }
            accepted.unwrap_or_else(|| (c.clone(), fitted.clone(), current))
        };

        let next_pattern = sign_pattern(y, &next_fitted);
        let decrease = current - next_value;
        c = next;
        fitted = next_fitted;
        history.push(next_value);

        if full_step && next_pattern == pattern {
            stop_reason = StopReason::PatternRepeated;
            current = next_value;
            break;
        }
        if decrease <= RELATIVE_DECREASE_TOL * current.abs().max(f64::MIN_POSITIVE) {
            stop_reason = StopReason::StalledObjective;
            current = next_value;
            break;
        }
        current = next_value;
        pattern = next_pattern;
    }

    let gradient_norm = norm(&objective.gradient_with(&c, &fitted));
    let diagnostics = Diagnostics {
        iterations,
        objective: current,
        gradient_norm,
        objective_history: history,
        stop_reason,
        jitter,
        wide_kernel: !cfg.kernel.in_unit_range(),
    };
    if stop_reason == StopReason::IterationLimit {
        return Err(Error::Convergence(diagnostics));
    }
    if !current.is_finite() || !gradient_norm.is_finite() {
        return Err(Error::Numerical("non-finite objective or gradient".into()));
    }

    let clip_level = match cfg.clip_level {
        Some(m) => Some(m),
        None => {
            let m = data.declared_bound().unwrap_or_else(|| data.max_abs_response());
            ClipLevel::new(m).ok()
        }
    };
    Ok(ExpectileModel {
        support_points: data.x().clone(),
        coefficients: c,
        kernel: cfg.kernel,
        lambda: cfg.lambda,
        tau,
        clip_level,
        diagnostics,
    })
}

/// A fitted decision function in representer form.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectileModel {
    support_points: Points,
    coefficients: Vec<f64>,
    kernel: GaussianKernel,
    lambda: f64,
    tau: AlsConfig,
    clip_level: Option<ClipLevel>,
    diagnostics: Diagnostics,
}

impl ExpectileModel {
    pub fn support_points(&self) -> &Points {
        &self.support_points
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn kernel(&self) -> GaussianKernel {
        self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> AlsConfig {
        self.tau
    }

    pub fn clip_level(&self) -> Option<ClipLevel> {
        self.clip_level
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn dim(&self) -> usize {
        self.support_points.dim()
    }

    /// Replaces the clip level used by the clipped predictions.
    pub fn set_clip_level(&mut self, level: Option<ClipLevel>) {
        self.clip_level = level;
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.support_points
            .rows()
            .zip(&self.coefficients)
            .map(|(s, c)| c * self.kernel.eval_unchecked(s, x))
            .sum()
    }

    /// Unclipped decision value `sum_i c_i k(x_i, x)`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.value_unchecked(x))
    }

    /// Decision value clipped at the model's clip level.
    pub fn predict_clipped(&self, x: &[f64]) -> Result<f64> {
        let m = self.clip_level.ok_or_else(|| Error::domain("model has no clip level"))?;
        Ok(m.apply(self.predict(x)?))
    }

    /// Predictions for every row of `points`, in order.
    pub fn predict_batch(&self, points: &Points, clipped: bool) -> Result<Vec<f64>> {
        if !points.is_empty() && points.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: points.dim() });
        }
        let m = if clipped {
            Some(self.clip_level.ok_or_else(|| Error::domain("model has no clip level"))?)
        } else {
            None
        };
        let n = points.len();
        Ok((0..n)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let v = self.value_unchecked(points.row(i));
                m.map_or(v, |m| m.apply(v))
            })
            .collect())
    }

    /// Mean ALS loss of the (optionally clipped) model on `data`.
    pub fn empirical_risk(&self, data: &Dataset, tau: AlsConfig, clipped: bool) -> Result<f64> {
        let preds = self.predict_batch(data.x(), clipped)?;
        Ok(risk_of_predictions(&preds, data.y(), tau))
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &ModelDocument::from(self))?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_reader(reader)?;
        doc.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_json(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Mean ALS loss of `predictions` against `y`.
pub fn risk_of_predictions(predictions: &[f64], y: &[f64], tau: AlsConfig) -> f64 {
    let n = y.len().max(1) as f64;
    predictions.iter().zip(y).map(|(&t, &y)| tau.loss(y, t)).sum::<f64>() / n
}

/// Empirical ALS risk `(1/n) sum_i L(y_i, f(x_i))` of an arbitrary decision
/// function.
pub fn empirical_risk<F: Fn(&[f64]) -> f64>(f: F, data: &Dataset, tau: AlsConfig) -> f64 {
    let n = data.len() as f64;
    data.x()
        .rows()
        .zip(data.y())
        .map(|(x, &y)| tau.loss(y, f(x)))
        .sum::<f64>()
        / n
}

/// On-disk layout of a fitted model.
#[derive(Serialize, Deserialize)]
struct ModelDocument {
    tau: f64,
    lambda: f64,
    gamma: f64,
    clip_level: Option<f64>,
    support_points: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
    diagnostics: Diagnostics,
}

impl From<&ExpectileModel> for ModelDocument {
    fn from(m: &ExpectileModel) -> Self {
        ModelDocument {
            tau: m.tau.tau(),
            lambda: m.lambda,
            gamma: m.kernel.gamma(),
            clip_level: m.clip_level.map(|c| c.value()),
            support_points: m.support_points.rows().map(<[f64]>::to_vec).collect(),
            coefficients: m.coefficients.clone(),
            diagnostics: m.diagnostics.clone(),
        }
    }
}

impl TryFrom<ModelDocument> for ExpectileModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let support_points = Points::from_rows(&doc.support_points)?;
        if support_points.len() != doc.coefficients.len() {
            return Err(Error::Parse(format!(
                "{} support points but {} coefficients",
                support_points.len(),
                doc.coefficients.len()
            )));
        }
        if !(doc.lambda.is_finite() && doc.lambda > 0.0) {
            return Err(Error::Parse(format!("invalid lambda {}", doc.lambda)));
        }
        Ok(ExpectileModel {
            support_points,
            coefficients: doc.coefficients,
            kernel: GaussianKernel::new(doc.gamma)?,
            lambda: doc.lambda,
            tau: AlsConfig::new(doc.tau)?,
            clip_level: doc.clip_level.map(ClipLevel::new).transpose()?,
            diagnostics: doc.diagnostics,
        })
    }
}
