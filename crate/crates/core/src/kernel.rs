//! Gaussian RBF kernel `k(x, x') = exp(-|x - x'|^2 / gamma^2)`, Gram
//! matrices, the spectrum of the empirical integral operator, and evaluators
//! for the entropy-number and covering-number bounds of the Gaussian RKHS.

use std::io::Write;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Points;
use crate::error::{Error, Result};
use crate::stats::ols_slope;

/// Gram entries below this are stored as exact zeros.
const FLUSH_TO_ZERO: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GaussianKernel {
    gamma: f64,
}

impl GaussianKernel {
    /// Any positive finite width. Bound evaluators additionally require
    /// `gamma <= 1`, see [`GaussianKernel::in_unit_range`].
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(Self { gamma })
        } else {
            Err(Error::domain(format!("kernel width must be positive, got {gamma}")))
        }
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn in_unit_range(&self) -> bool {
        self.gamma <= 1.0
    }

    /// Kernel value without a dimension check.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for (a, b) in x.iter().zip(z) {
            let t = a - b;
            d2 += t * t;
        }
        (-d2 / (self.gamma * self.gamma)).exp()
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != z.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: z.len() });
        }
        Ok(self.eval_unchecked(x, z))
    }
}

impl TryFrom<f64> for GaussianKernel {
    type Error = Error;

    fn try_from(gamma: f64) -> Result<Self> {
        Self::new(gamma)
    }
}

impl From<GaussianKernel> for f64 {
    fn from(k: GaussianKernel) -> f64 {
        k.gamma
    }
}

/// Symmetric kernel matrix over a point set, with unit diagonal.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: Mat<f64>,
    points: Points,
    kernel: GaussianKernel,
}

impl GramMatrix {
    pub fn entries(&self) -> &Mat<f64> {
        &self.entries
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn kernel(&self) -> GaussianKernel {
        self.kernel
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `G v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (j, &vj) in v.iter().enumerate().take(n) {
            if vj == 0.0 {
                continue;
            }
            for (o, g) in out.iter_mut().zip(self.entries.col(j).iter()) {
                *o += g * vj;
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.len()).map(|i| self.entries[(i, i)]).sum()
    }
}

/// Assembles the Gram matrix of `points`. The upper triangle is computed and
/// mirrored, so the result is exactly symmetric.
pub fn gram(kernel: GaussianKernel, points: &Points) -> Result<GramMatrix> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyInput("gram matrix needs at least one point"));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = points.row(i);
            (i..n)
                .map(|j| {
                    let v = kernel.eval_unchecked(xi, points.row(j));
                    if v < FLUSH_TO_ZERO {
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let mut entries = Mat::<f64>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + k;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix { entries, points: points.clone(), kernel })
}

/// Eigenvalues of `G / n`, sorted nonincreasing: the spectrum of the
/// integral operator under the empirical measure of the points. `G` is
/// positive semidefinite, so negative values down to `-1e-10` are round-off
/// and are returned as zero; anything below is an error.
pub fn empirical_eigendecay(g: &GramMatrix) -> Result<Vec<f64>> {
    let n = g.len();
    let scaled = Mat::<f64>::from_fn(n, n, |i, j| g.get(i, j) / n as f64);
    let mut eig = scaled
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    eig.sort_by(|a, b| b.total_cmp(a));
    let floor = -1e-10;
    if let Some(bad) = eig.iter().find(|&&v| v < floor || !v.is_finite()) {
        return Err(Error::Numerical(format!("gram matrix not positive semidefinite: eigenvalue {bad}")));
    }
    for v in eig.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// Power-law fit `lambda_i ~ a i^(-1/p)` to an eigenvalue sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Slope of `log lambda_i` against `log i`.
    pub slope: f64,
    /// Implied exponent `p = -1 / slope`.
    pub p: f64,
    pub points_used: usize,
}

/// Least-squares fit of `log lambda_i` against `log i` over
/// `i in [2, n/4]` (1-based), skipping eigenvalues at round-off level.
pub fn decay_exponent(eigenvalues: &[f64]) -> Option<DecayFit> {
    let n = eigenvalues.len();
    let top = *eigenvalues.first()?;
    let cutoff = 1e-13 * top.max(f64::MIN_POSITIVE);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 2..=(n / 4) {
        let v = eigenvalues[i - 1];
        if v > cutoff {
            xs.push((i as f64).ln());
            ys.push(v.ln());
        }
    }
    let slope = ols_slope(&xs, &ys)?;
    Some(DecayFit { slope, p: -1.0 / slope, points_used: xs.len() })
}

/// Writes eigenvalues as CSV `i,lambda` with 1-based indices.
pub fn write_eigenvalues_csv<W: Write>(eigenvalues: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["i", "lambda"])?;
    for (i, v) in eigenvalues.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Inputs of the entropy-number bound for the Gaussian RKHS embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBoundParams {
    p: f64,
    d: u32,
    k: f64,
    gamma: f64,
}

impl EntropyBoundParams {
    /// `k` is the dimension-dependent constant of the covering-number bound;
    /// it is not known in closed form and is supplied by the caller (1 by
    /// convention).
    pub fn new(p: f64, d: u32, k: f64, gamma: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("p must lie in (0, 1), got {p}")));
        }
        if d == 0 {
            return Err(Error::domain("dimension must be at least 1"));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::domain(format!("constant K must be positive, got {k}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        Ok(Self { p, d, k, gamma })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn d(&self) -> u32 {
        self.d
    }
}

/// `(3K)^(1/p) ((d+1)/(e p))^((d+1)/p) gamma^(-d/p) i^(-1/p)`.
pub fn entropy_bound(params: &EntropyBoundParams, i: u64) -> Result<f64> {
    if i == 0 {
        return Err(Error::domain("entropy index starts at 1"));
    }
    let EntropyBoundParams { p, d, k, gamma } = *params;
    let d = f64::from(d);
    let inv_p = 1.0 / p;
    Ok((3.0 * k).powf(inv_p)
        * ((d + 1.0) / (std::f64::consts::E * p)).powf((d + 1.0) * inv_p)
        * gamma.powf(-d * inv_p)
        * (i as f64).powf(-inv_p))
}

/// `K (log 1/eps)^(d+1) gamma^(-d)`, the sup-norm log covering number bound of
/// the unit ball of the Gaussian RKHS.
pub fn covering_bound(k: f64, d: u32, gamma: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::domain(format!("eps must lie in (0, 1/2), got {eps}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::domain(format!("constant K must be positive, got {k}")));
    }
    let d = f64::from(d);
    Ok(k * (1.0 / eps).ln().powf(d + 1.0) * gamma.powf(-d))
}

/// `eps^p (log 1/eps)^(d+1)`, the profile maximized when converting covering
/// numbers into entropy numbers.
pub fn covering_profile(p: f64, d: u32, eps: f64) -> f64 {
    eps.powf(p) * (1.0 / eps).ln().powf(f64::from(d) + 1.0)
}

/// Closed-form maximizer `exp(-(d+1)/p)` of [`covering_profile`].
pub fn covering_profile_argmax(p: f64, d: u32) -> f64 {
    (-(f64::from(d) + 1.0) / p).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k(g: f64) -> GaussianKernel {
        GaussianKernel::new(g).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(k(1.0).eval(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 1.0);
        assert_abs_diff_eq!(k(1.0).eval(&[0.0], &[1.0]).unwrap(), (-1.0f64).exp(), epsilon = 1e-16);
        assert_abs_diff_eq!(k(0.5).eval(&[0.0], &[1.0]).unwrap(), (-4.0f64).exp(), epsilon = 1e-16);
        assert!(matches!(k(1.0).eval(&[0.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::new(2.0).is_ok());
        assert!(!k(2.0).in_unit_range());
    }

    #[test]
    fn gram_examples() {
        let g = gram(k(1.0), &Points::from_scalars(&[0.7]).unwrap()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(0, 0), 1.0);

        let g = gram(k(0.3), &Points::from_scalars(&[0.2, 0.2]).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g.get(i, j), 1.0);
            }
        }

        let g = gram(k(1.0), &Points::from_scalars(&[0.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(g.get(0, 1), (-1.0f64).exp(), epsilon = 1e-16);
        assert_abs_diff_eq!(g.get(0, 2), (-4.0f64).exp(), epsilon = 1e-16);
        assert_abs_diff_eq!(g.get(1, 2), (-1.0f64).exp(), epsilon = 1e-16);
        assert_eq!(g.get(2, 0), g.get(0, 2));
    }

    #[test]
    fn gram_rejects_empty_and_flushes_tiny_entries() {
        assert!(gram(k(1.0), &Points::new(1, vec![]).unwrap()).is_err());
        let g = gram(k(0.01), &Points::from_scalars(&[0.0, 10.0]).unwrap()).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
    }

    #[test]
    fn eigendecay_small_cases() {
        let g = gram(k(1.0), &Points::from_scalars(&[0.4]).unwrap()).unwrap();
        assert_eq!(empirical_eigendecay(&g).unwrap(), vec![1.0]);
        let g = gram(k(1.0), &Points::from_scalars(&[0.4, 0.4]).unwrap()).unwrap();
        let e = empirical_eigendecay(&g).unwrap();
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn decay_fit_recovers_power_law() {
        let eig: Vec<f64> = (1..=64).map(|i| 2.0 * (i as f64).powf(-2.5)).collect();
        let fit = decay_exponent(&eig).unwrap();
        assert_abs_diff_eq!(fit.slope, -2.5, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.p, 0.4, epsilon = 1e-10);
        assert_eq!(fit.points_used, 15);
        assert!(decay_exponent(&[1.0, 0.5]).is_none());
    }

    #[test]
    fn entropy_bound_examples() {
        let base = EntropyBoundParams::new(0.5, 1, 1.0, 1.0).unwrap();
        let v = entropy_bound(&base, 1).unwrap();
        let expected = 9.0 * (4.0 / std::f64::consts::E).powi(4);
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        // the published rounding of this value is 42.18; the exact figure is 42.199
        assert_abs_diff_eq!(v, 42.18, epsilon = 0.02);
        assert_abs_diff_eq!(entropy_bound(&base, 2).unwrap(), v / 4.0, epsilon = 1e-12);
        let narrow = EntropyBoundParams::new(0.5, 1, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(entropy_bound(&narrow, 1).unwrap(), 4.0 * v, epsilon = 1e-11);
        assert!(EntropyBoundParams::new(1.0, 1, 1.0, 1.0).is_err());
        assert!(EntropyBoundParams::new(0.0, 1, 1.0, 1.0).is_err());
        assert!(EntropyBoundParams::new(0.5, 1, 1.0, 1.5).is_err());
        assert!(entropy_bound(&base, 0).is_err());
    }

    #[test]
    fn covering_bound_examples() {
        let e1 = (-1.0f64).exp();
        assert_abs_diff_eq!(covering_bound(1.0, 1, 1.0, e1).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(covering_bound(1.0, 1, 0.5, e1).unwrap(), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(covering_bound(2.0, 2, 1.0, (-2.0f64).exp()).unwrap(), 16.0, epsilon = 1e-13);
        assert!(covering_bound(1.0, 1, 1.0, 0.5).is_err());
        assert!(covering_bound(1.0, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn entropy_bound_monotone_on_grid() {
        for &p in &[0.1, 0.3, 0.5, 0.9] {
            for d in 1..=4 {
                let mut prev_gamma = f64::INFINITY;
                for gi in 1..=10 {
                    let gamma = gi as f64 / 10.0;
                    let params = EntropyBoundParams::new(p, d, 1.0, gamma).unwrap();
                    let mut prev = f64::INFINITY;
                    for i in 1..50 {
                        let v = entropy_bound(&params, i).unwrap();
                        assert!(v <= prev);
                        prev = v;
                    }
                    let at_one = entropy_bound(&params, 1).unwrap();
                    // nonincreasing in gamma == nondecreasing as gamma shrinks
                    assert!(at_one <= prev_gamma);
                    prev_gamma = at_one;
                }
            }
        }
    }

    #[test]
    fn eigenvalue_csv_format() {
        let mut buf = Vec::new();
        write_eigenvalues_csv(&[0.75, 0.25], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,lambda\n1,0.75\n2,0.25\n");
    }
}
