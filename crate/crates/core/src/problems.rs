//! Synthetic regression problems whose conditional `tau`-expectile is known.
//!
//! Responses are `y = m(x) + e` with additive noise `e` independent of `x`,
//! so the conditional expectile is `f*(x) = m(x) + e_tau` where `e_tau` is the
//! `tau`-expectile of the noise. Problem kinds are registered by name in a
//! [`ProblemRegistry`] and built from a [`ProblemSpec`].

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use libm::erfc;

use crate::als::{expectile, AlsConfig, DiscreteDistribution};
use crate::data::{Dataset, Points};
use crate::error::{Error, Result};
use crate::quadrature::Rule;
use crate::rng::{label, substream};
use crate::stats::mean_and_stderr;

/// Additive noise distribution.
pub trait NoiseModel: Send + Sync + std::fmt::Debug {
    fn sample(&self, rng: &mut dyn RngCore) -> f64;

    /// `Some(b)` when `|e| <= b` almost surely.
    fn bound(&self) -> Option<f64>;

    /// `tau`-expectile of the noise, by the model's primary route.
    fn expectile(&self, tau: AlsConfig) -> f64;

    /// `tau`-expectile by a route independent of [`NoiseModel::expectile`].
    fn expectile_oracle(&self, tau: AlsConfig) -> f64;
}

/// Degenerate noise: `e = 0`.
#[derive(Debug, Clone, Copy)]
pub struct NoNoise;

impl NoiseModel for NoNoise {
    fn sample(&self, _rng: &mut dyn RngCore) -> f64 {
        0.0
    }

    fn bound(&self) -> Option<f64> {
        Some(0.0)
    }

    fn expectile(&self, _tau: AlsConfig) -> f64 {
        0.0
    }

    fn expectile_oracle(&self, tau: AlsConfig) -> f64 {
        let q = DiscreteDistribution::point_mass(0.0).expect("point mass is valid");
        expectile(&q, tau)
    }
}

/// Bisection for the root of a decreasing function on `[lo, hi]`.
fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gaussian noise `N(0, sd^2)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNoise {
    pub sd: f64,
}

/// Half-width of each quadrature panel, in standard deviations.
const NORMAL_PANEL: f64 = 12.0;

fn standard_normal_pdf(y: f64) -> f64 {
    (-0.5 * y * y).exp() / (2.0 * PI).sqrt()
}

/// `tau`-expectile of the standard normal: bisection on the first-order
/// condition with both partial moments integrated by 100-node Gauss-Legendre
/// panels on either side of the candidate (200 nodes in total). Cached per
/// `tau`.
pub fn standard_normal_expectile(tau: AlsConfig) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = tau.tau().to_bits();
    if let Some(&v) = cache.lock().expect("expectile cache poisoned").get(&key) {
        return v;
    }
    let rule = Rule::new(100);
    let condition = |t: f64| {
        let upper = rule.integrate(t, t + NORMAL_PANEL, |y| (y - t) * standard_normal_pdf(y));
        let lower = rule.integrate(t - NORMAL_PANEL, t, |y| (t - y) * standard_normal_pdf(y));
        tau.tau() * upper - (1.0 - tau.tau()) * lower
    };
    let v = bisect_decreasing(condition, -8.0, 8.0);
    cache.lock().expect("expectile cache poisoned").insert(key, v);
    v
}

/// Same quantity from the closed-form partial moments
/// `E(Z - t)_+ = phi(t) - t (1 - Phi(t))`, `E(t - Z)_+ = t Phi(t) + phi(t)`.
pub fn standard_normal_expectile_closed_form(tau: AlsConfig) -> f64 {
    let condition = |t: f64| {
        let phi = standard_normal_pdf(t);
        let upper_tail = 0.5 * erfc(t / SQRT_2);
        let lower_tail = 0.5 * erfc(-t / SQRT_2);
        tau.tau() * (phi - t * upper_tail) - (1.0 - tau.tau()) * (t * lower_tail + phi)
    };
    bisect_decreasing(condition, -8.0, 8.0)
}

impl NoiseModel for GaussianNoise {
    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.sd * z
    }

    fn bound(&self) -> Option<f64> {
        None
    }

    fn expectile(&self, tau: AlsConfig) -> f64 {
        self.sd * standard_normal_expectile(tau)
    }

    fn expectile_oracle(&self, tau: AlsConfig) -> f64 {
        self.sd * standard_normal_expectile_closed_form(tau)
    }
}

/// Uniform noise on `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy)]
pub struct UniformNoise {
    pub half_width: f64,
}

impl NoiseModel for UniformNoise {
    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rng.random_range(-1.0..=1.0);
        self.half_width * u
    }

    fn bound(&self) -> Option<f64> {
        Some(self.half_width)
    }

    /// Closed form `a (sqrt(tau) - sqrt(1 - tau)) / (sqrt(tau) + sqrt(1 - tau))`.
    fn expectile(&self, tau: AlsConfig) -> f64 {
        let (s, r) = (tau.tau().sqrt(), (1.0 - tau.tau()).sqrt());
        self.half_width * (s - r) / (s + r)
    }

    /// Bisection with Gauss-Legendre partial moments (exact for the piecewise
    /// polynomial integrands).
    fn expectile_oracle(&self, tau: AlsConfig) -> f64 {
        let a = self.half_width;
        let rule = Rule::new(8);
        let density = 0.5 / a;
        let condition = |t: f64| {
            let upper = rule.integrate(t, a, |y| (y - t) * density);
            let lower = rule.integrate(-a, t, |y| (t - y) * density);
            tau.tau() * upper - (1.0 - tau.tau()) * lower
        };
        bisect_decreasing(condition, -a, a)
    }
}

/// Deterministic part `m(x)` of the response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanFunction {
    /// `amplitude * sin(2 pi xbar)` with `xbar` the coordinate mean.
    Sine { amplitude: f64 },
    Constant(f64),
}

impl MeanFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            MeanFunction::Sine { amplitude } => {
                let mean = x.iter().sum::<f64>() / x.len() as f64;
                amplitude * (2.0 * PI * mean).sin()
            }
            MeanFunction::Constant(c) => c,
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match *self {
            MeanFunction::Sine { amplitude } => amplitude.abs(),
            MeanFunction::Constant(c) => c.abs(),
        }
    }
}

/// Fresh Monte Carlo sample `(x, y, f*(x))` from a problem.
#[derive(Debug, Clone)]
pub struct McSample {
    pub x: Points,
    pub y: Vec<f64>,
    pub target: Vec<f64>,
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// A distribution on `[0, 1]^d x R` with known conditional `tau`-expectile.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    name: String,
    dim: usize,
    tau: AlsConfig,
    mean: MeanFunction,
    noise: Arc<dyn NoiseModel>,
    noise_expectile: f64,
}

impl SyntheticProblem {
    /// Builds the problem and checks on 100 probe points that the target
    /// agrees with the noise model's independent expectile oracle to 1e-10.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        tau: AlsConfig,
        mean: MeanFunction,
        noise: Arc<dyn NoiseModel>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("problem dimension must be at least 1"));
        }
        let noise_expectile = noise.expectile(tau);
        let problem = Self { name: name.into(), dim, tau, mean, noise, noise_expectile };
        let oracle_shift = problem.noise.expectile_oracle(tau);
        let mut rng = substream(0, &[label::PROBLEM]);
        for _ in 0..100 {
            let x = problem.sample_x(&mut rng);
            let oracle = problem.mean.eval(&x) + oracle_shift;
            let target = problem.target(&x);
            if (oracle - target).abs() > 1e-10 {
                return Err(Error::Numerical(format!(
                    "target {target} disagrees with expectile oracle {oracle} for problem '{}'",
                    problem.name
                )));
            }
        }
        Ok(problem)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> AlsConfig {
        self.tau
    }

    pub fn mean_function(&self) -> MeanFunction {
        self.mean
    }

    pub fn noise(&self) -> &dyn NoiseModel {
        self.noise.as_ref()
    }

    /// The conditional `tau`-expectile `f*(x)`.
    pub fn target(&self, x: &[f64]) -> f64 {
        self.mean.eval(x) + self.noise_expectile
    }

    /// `Some(M)` when `|y| <= M` almost surely.
    pub fn response_bound(&self) -> Option<f64> {
        self.noise.bound().map(|b| self.mean.sup_abs() + b)
    }

    pub fn target_bound(&self) -> f64 {
        self.mean.sup_abs() + self.noise_expectile.abs()
    }

    pub fn sample_x(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim).map(|_| rng.random::<f64>()).collect()
    }

    pub fn sample_response(&self, x: &[f64], rng: &mut dyn RngCore) -> f64 {
        self.mean.eval(x) + self.noise.sample(rng)
    }

    /// `n` i.i.d. samples. Bounded problems declare their response bound.
    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        let mut coords = Vec::with_capacity(n * self.dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.sample_x(rng);
            y.push(self.sample_response(&x, rng));
            coords.extend_from_slice(&x);
        }
        Dataset::with_bound(Points::new(self.dim, coords)?, y, self.response_bound().filter(|&m| m > 0.0))
    }

    pub fn mc_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<McSample> {
        let data = self.sample(n, rng)?;
        let target = data.x().rows().map(|x| self.target(x)).collect();
        Ok(McSample { x: data.x().clone(), y: data.y().to_vec(), target })
    }

    /// Excess risk `E[L(y, f(x)) - L(y, f*(x))]` from predictions `f(x_i)` on
    /// a Monte Carlo sample, with the target evaluated on the same draws.
    pub fn excess_from_predictions(&self, predictions: &[f64], sample: &McSample) -> McEstimate {
        let diffs: Vec<f64> = predictions
            .iter()
            .zip(sample.y.iter().zip(&sample.target))
            .map(|(&f, (&y, &t))| self.tau.loss_difference(y, f, t))
            .collect();
        let (mean, stderr) = mean_and_stderr(&diffs);
        McEstimate { mean, stderr }
    }
}

/// Parameters shared by all problem kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub tau: f64,
    pub dim: usize,
    /// Noise scale; each kind has its own default.
    pub noise_scale: Option<f64>,
}

impl ProblemSpec {
    pub fn new(tau: f64, dim: usize) -> Self {
        Self { tau, dim, noise_scale: None }
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = Some(scale);
        self
    }
}

/// A named family of synthetic problems.
pub trait ProblemKind: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn build(&self, spec: &ProblemSpec) -> Result<SyntheticProblem>;
}

fn noise_scale(spec: &ProblemSpec, default: f64) -> Result<f64> {
    let s = spec.noise_scale.unwrap_or(default);
    if s.is_finite() && s > 0.0 {
        Ok(s)
    } else {
        Err(Error::domain(format!("noise scale must be positive, got {s}")))
    }
}

struct NoiselessSine;

impl ProblemKind for NoiselessSine {
    fn name(&self) -> &'static str {
        "noiseless-sine"
    }

    fn description(&self) -> &'static str {
        "y = sin(2 pi xbar), no noise"
    }

    fn build(&self, spec: &ProblemSpec) -> Result<SyntheticProblem> {
        SyntheticProblem::new(
            self.name(),
            spec.dim,
            AlsConfig::new(spec.tau)?,
            MeanFunction::Sine { amplitude: 1.0 },
            Arc::new(NoNoise),
        )
    }
}

struct GaussNoise;

impl ProblemKind for GaussNoise {
    fn name(&self) -> &'static str {
        "gauss-noise"
    }

    fn description(&self) -> &'static str {
        "y = sin(2 pi xbar) + N(0, s^2), s = 0.5 by default"
    }

    fn build(&self, spec: &ProblemSpec) -> Result<SyntheticProblem> {
        SyntheticProblem::new(
            self.name(),
            spec.dim,
            AlsConfig::new(spec.tau)?,
            MeanFunction::Sine { amplitude: 1.0 },
            Arc::new(GaussianNoise { sd: noise_scale(spec, 0.5)? }),
        )
    }
}

struct BoundedNoise;

impl ProblemKind for BoundedNoise {
    fn name(&self) -> &'static str {
        "bounded-noise"
    }

    fn description(&self) -> &'static str {
        "y = 0.5 sin(2 pi xbar) + U(-a, a), a = 0.5 by default; |y| <= 0.5 + a"
    }

    fn build(&self, spec: &ProblemSpec) -> Result<SyntheticProblem> {
        SyntheticProblem::new(
            self.name(),
            spec.dim,
            AlsConfig::new(spec.tau)?,
            MeanFunction::Sine { amplitude: 0.5 },
            Arc::new(UniformNoise { half_width: noise_scale(spec, 0.5)? }),
        )
    }
}

struct ConstantTarget;

impl ProblemKind for ConstantTarget {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn description(&self) -> &'static str {
        "y = 0.3 + N(0, s^2), s = 0.5 by default"
    }

    fn build(&self, spec: &ProblemSpec) -> Result<SyntheticProblem> {
        SyntheticProblem::new(
            self.name(),
            spec.dim,
            AlsConfig::new(spec.tau)?,
            MeanFunction::Constant(0.3),
            Arc::new(GaussianNoise { sd: noise_scale(spec, 0.5)? }),
        )
    }
}

struct ZeroTarget;

impl ProblemKind for ZeroTarget {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn description(&self) -> &'static str {
        "y = 0"
    }

    fn build(&self, spec: &ProblemSpec) -> Result<SyntheticProblem> {
        SyntheticProblem::new(
            self.name(),
            spec.dim,
            AlsConfig::new(spec.tau)?,
            MeanFunction::Constant(0.0),
            Arc::new(NoNoise),
        )
    }
}

/// Problem kinds selectable by name.
pub struct ProblemRegistry {
    kinds: Vec<Box<dyn ProblemKind>>,
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self { kinds: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(NoiselessSine));
        r.register(Box::new(GaussNoise));
        r.register(Box::new(BoundedNoise));
        r.register(Box::new(ConstantTarget));
        r.register(Box::new(ZeroTarget));
        r
    }

    /// Adds a kind, replacing any existing kind of the same name.
    pub fn register(&mut self, kind: Box<dyn ProblemKind>) {
        self.kinds.retain(|k| k.name() != kind.name());
        self.kinds.push(kind);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ProblemKind> {
        self.kinds
            .iter()
            .find(|k| k.name() == name)
            .map(|k| k.as_ref())
            .ok_or_else(|| Error::Unknown { kind: "problem", name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kinds.iter().map(|k| k.name()).collect()
    }

    pub fn build(&self, name: &str, spec: &ProblemSpec) -> Result<SyntheticProblem> {
        self.get(name)?.build(spec)
    }
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Builds a built-in problem and draws `n` training samples from the
/// `(seed, train)` stream.
pub fn synth(kind: &str, spec: &ProblemSpec, n: usize, seed: u64) -> Result<(SyntheticProblem, Dataset)> {
    if n == 0 {
        return Err(Error::EmptyInput("synthetic sample size must be positive"));
    }
    let problem = ProblemRegistry::builtin().build(kind, spec)?;
    let mut rng = substream(seed, &[label::TRAIN]);
    let data = problem.sample(n, &mut rng)?;
    Ok((problem, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(t: f64) -> AlsConfig {
        AlsConfig::new(t).unwrap()
    }

    #[test]
    fn normal_expectile_routes_agree() {
        for &t in &[0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let q = standard_normal_expectile(cfg(t));
            let c = standard_normal_expectile_closed_form(cfg(t));
            assert_abs_diff_eq!(q, c, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(standard_normal_expectile(cfg(0.5)), 0.0, epsilon = 1e-14);
        // symmetry e_{1-tau} = -e_tau
        assert_abs_diff_eq!(
            standard_normal_expectile(cfg(0.9)),
            -standard_normal_expectile(cfg(0.1)),
            epsilon = 1e-13
        );
    }

    /// Monte Carlo discretization of N(0,1) fed to the discrete expectile.
    #[test]
    fn normal_expectile_matches_discretized_sample() {
        let mut rng = substream(3, &[99]);
        let values: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let q = DiscreteDistribution::uniform(&values).unwrap();
        let e = expectile(&q, cfg(0.9));
        assert_abs_diff_eq!(e, standard_normal_expectile(cfg(0.9)), epsilon = 0.01);
    }

    #[test]
    fn uniform_expectile_routes_agree() {
        let u = UniformNoise { half_width: 0.7 };
        for &t in &[0.05, 0.5, 0.8, 0.95] {
            assert_abs_diff_eq!(u.expectile(cfg(t)), u.expectile_oracle(cfg(t)), epsilon = 1e-13);
        }
    }

    #[test]
    fn noiseless_sine_is_exact() {
        let (p, d) = synth("noiseless-sine", &ProblemSpec::new(0.5, 1), 8, 11).unwrap();
        for (x, &y) in d.x().rows().zip(d.y()) {
            assert_eq!(y, (2.0 * PI * x[0]).sin());
            assert_eq!(p.target(x), y);
        }
        assert_eq!(d.declared_bound(), Some(1.0));
    }

    #[test]
    fn gauss_noise_targets() {
        let reg = ProblemRegistry::builtin();
        let half = reg.build("gauss-noise", &ProblemSpec::new(0.5, 1)).unwrap();
        let x = [0.1];
        assert_abs_diff_eq!(half.target(&x), half.mean_function().eval(&x), epsilon = 1e-14);
        let high = reg.build("gauss-noise", &ProblemSpec::new(0.9, 1)).unwrap();
        let shift = 0.5 * standard_normal_expectile_closed_form(cfg(0.9));
        assert_abs_diff_eq!(high.target(&x), high.mean_function().eval(&x) + shift, epsilon = 1e-12);
        assert!(high.response_bound().is_none());
    }

    #[test]
    fn registry_lookup() {
        let reg = ProblemRegistry::builtin();
        assert!(reg.names().contains(&"bounded-noise"));
        assert!(matches!(reg.get("nope"), Err(Error::Unknown { .. })));
        assert!(synth("nope", &ProblemSpec::new(0.5, 1), 4, 0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = ProblemSpec::new(0.7, 2);
        let (_, a) = synth("gauss-noise", &spec, 20, 5).unwrap();
        let (_, b) = synth("gauss-noise", &spec, 20, 5).unwrap();
        let (_, c) = synth("gauss-noise", &spec, 20, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bounded_problem_respects_bound() {
        let (p, d) = synth("bounded-noise", &ProblemSpec::new(0.3, 1), 500, 1).unwrap();
        assert_eq!(p.response_bound(), Some(1.0));
        assert!(d.max_abs_response() <= 1.0);
    }

    #[test]
    fn excess_of_target_is_exactly_zero() {
        let p = ProblemRegistry::builtin().build("gauss-noise", &ProblemSpec::new(0.8, 1)).unwrap();
        let mut rng = substream(1, &[2]);
        let s = p.mc_sample(1000, &mut rng).unwrap();
        let est = p.excess_from_predictions(&s.target, &s);
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }
}
