//! Asymmetric least squares (ALS) loss, clipping, and exact expectiles of
//! finitely supported distributions.
//!
//! The loss for asymmetry level `tau` weights squared residuals by `tau` when
//! the response lies on or above the prediction and by `1 - tau` below it:
//!
//! ```text
//! L(y, t) = (1 - tau) (y - t)^2   if y <  t
//!           tau       (y - t)^2   if y >= t
//! ```
//!
//! Its minimizer under a distribution `Q` is the `tau`-expectile of `Q`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Asymmetry level of the loss together with the two weight bounds derived
/// from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AlsConfig {
    tau: f64,
}

impl AlsConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 && tau < 1.0 {
            Ok(Self { tau })
        } else {
            Err(Error::domain(format!("tau must lie in (0, 1), got {tau}")))
        }
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `min{tau, 1 - tau}`, the lower calibration constant.
    #[inline]
    pub fn min_weight(&self) -> f64 {
        self.tau.min(1.0 - self.tau)
    }

    /// `max{tau, 1 - tau}`, the upper calibration constant.
    #[inline]
    pub fn max_weight(&self) -> f64 {
        self.tau.max(1.0 - self.tau)
    }

    /// Weight applied to a squared residual `y - t`. Ties go to the upper branch.
    #[inline]
    pub fn weight(&self, residual: f64) -> f64 {
        if residual >= 0.0 {
            self.tau
        } else {
            1.0 - self.tau
        }
    }

    /// Unchecked loss evaluation for hot loops.
    #[inline]
    pub fn loss(&self, y: f64, t: f64) -> f64 {
        let r = y - t;
        self.weight(r) * r * r
    }

    /// `L(y, t) - L(y, s)` evaluated without forming the two losses when both
    /// residuals fall in the same branch.
    #[inline]
    pub fn loss_difference(&self, y: f64, t: f64, s: f64) -> f64 {
        let (rt, rs) = (y - t, y - s);
        let (wt, ws) = (self.weight(rt), self.weight(rs));
        if wt == ws {
            wt * (s - t) * (rt + rs)
        } else {
            wt * rt * rt - ws * rs * rs
        }
    }
}

impl TryFrom<f64> for AlsConfig {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<AlsConfig> for f64 {
    fn from(cfg: AlsConfig) -> f64 {
        cfg.tau
    }
}

/// Level `M > 0` at which predictions are truncated to `[-M, M]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ClipLevel(f64);

impl ClipLevel {
    pub fn new(m: f64) -> Result<Self> {
        if m.is_finite() && m > 0.0 {
            Ok(Self(m))
        } else {
            Err(Error::domain(format!("clip level must be positive and finite, got {m}")))
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.0
    }

    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        clip(t, *self)
    }
}

impl TryFrom<f64> for ClipLevel {
    type Error = Error;

    fn try_from(m: f64) -> Result<Self> {
        Self::new(m)
    }
}

impl From<ClipLevel> for f64 {
    fn from(m: ClipLevel) -> f64 {
        m.0
    }
}

/// Checked evaluation of the ALS loss.
pub fn als_loss(cfg: AlsConfig, y: f64, t: f64) -> Result<f64> {
    ensure_finite(y, "response")?;
    ensure_finite(t, "prediction")?;
    Ok(cfg.loss(y, t))
}

#[inline]
pub fn clip(t: f64, level: ClipLevel) -> f64 {
    let m = level.0;
    if t < -m {
        -m
    } else if t > m {
        m
    } else {
        t
    }
}

/// Local Lipschitz constant of the loss on `[-M, M]`: `max{tau, 1 - tau} * 4M`.
pub fn lipschitz_constant(cfg: AlsConfig, level: ClipLevel) -> f64 {
    cfg.max_weight() * 4.0 * level.0
}

const MASS_TOLERANCE: f64 = 1e-12;
const RENORMALIZE_TOLERANCE: f64 = 1e-9;

/// A finitely supported distribution on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    atoms: Vec<Atom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub mass: f64,
}

impl DiscreteDistribution {
    /// Builds a distribution from `(value, mass)` pairs.
    ///
    /// Masses must be positive. A total mass within `1e-9` of one is
    /// renormalized; anything further off is rejected.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|(value, mass)| Atom { value, mass })
            .collect();
        if atoms.is_empty() {
            return Err(Error::EmptyInput("distribution needs at least one atom"));
        }
        for a in &atoms {
            ensure_finite(a.value, "atom value")?;
            if !(a.mass.is_finite() && a.mass > 0.0) {
                return Err(Error::domain(format!("atom mass must be positive, got {}", a.mass)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        let gap = (total - 1.0).abs();
        if gap > RENORMALIZE_TOLERANCE {
            return Err(Error::domain(format!("atom masses sum to {total}, expected 1")));
        }
        if gap > MASS_TOLERANCE {
            for a in &mut atoms {
                a.mass /= total;
            }
        }
        Ok(Self { atoms })
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new([(value, 1.0)])
    }

    /// Equal masses on the given values.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let m = 1.0 / values.len().max(1) as f64;
        Self::new(values.iter().map(|&v| (v, m)))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn min_value(&self) -> f64 {
        self.atoms.iter().map(|a| a.value).fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.atoms.iter().map(|a| a.value).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn span(&self) -> f64 {
        self.max_value() - self.min_value()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.value * a.mass).sum()
    }

    /// First-order condition of the expectile,
    /// `tau * E(y - t)_+ - (1 - tau) * E(t - y)_+`. Strictly decreasing in `t`.
    pub fn newey_residual(&self, cfg: AlsConfig, t: f64) -> f64 {
        let (mut upper, mut lower) = (0.0, 0.0);
        for a in &self.atoms {
            if a.value >= t {
                upper += (a.value - t) * a.mass;
            } else {
                lower += (t - a.value) * a.mass;
            }
        }
        cfg.tau * upper - (1.0 - cfg.tau) * lower
    }

    fn newey_slope(&self, cfg: AlsConfig, t: f64) -> f64 {
        let upper_mass: f64 = self.atoms.iter().filter(|a| a.value >= t).map(|a| a.mass).sum();
        -(cfg.tau * upper_mass + (1.0 - cfg.tau) * (1.0 - upper_mass))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            value: f64,
            mass: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["value", "mass"] {
            return Err(Error::Parse(format!("expected header 'value,mass', got '{}'", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut atoms = Vec::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            atoms.push((row.value, row.mass));
        }
        Self::new(atoms)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["value", "mass"])?;
        for a in &self.atoms {
            w.write_record([a.value.to_string(), a.mass.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// The `tau`-expectile of `q`: the unique root of the first-order condition
/// inside `[min atom, max atom]`.
///
/// Bisection to a bracket of width `1e-14 * span`, followed by one Newton
/// step on the piecewise-linear condition, kept only if it shrinks the
/// residual.
pub fn expectile(q: &DiscreteDistribution, cfg: AlsConfig) -> f64 {
    let (mut lo, mut hi) = (q.min_value(), q.max_value());
    let span = hi - lo;
    if q.atoms.len() == 1 || span == 0.0 {
        return lo;
    }
    let width = 1e-14 * span;
    for _ in 0..200 {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if q.newey_residual(cfg, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let g = q.newey_residual(cfg, t);
    let polished = t - g / q.newey_slope(cfg, t);
    if polished.is_finite()
        && polished >= q.min_value()
        && polished <= q.max_value()
        && q.newey_residual(cfg, polished).abs() < g.abs()
    {
        polished
    } else {
        t
    }
}

/// Expected loss `sum_y L(y, t) m(y)` of predicting `t` under `q`.
pub fn inner_risk(q: &DiscreteDistribution, cfg: AlsConfig, t: f64) -> f64 {
    q.atoms.iter().map(|a| cfg.loss(a.value, t) * a.mass).sum()
}

/// Inner risk at `t` minus the minimal inner risk, attained at the expectile.
pub fn excess_inner_risk(q: &DiscreteDistribution, cfg: AlsConfig, t: f64) -> f64 {
    let star = expectile(q, cfg);
    excess_inner_risk_at(q, cfg, t, star)
}

/// Same as [`excess_inner_risk`] with a precomputed expectile.
pub fn excess_inner_risk_at(q: &DiscreteDistribution, cfg: AlsConfig, t: f64, star: f64) -> f64 {
    q.atoms
        .iter()
        .map(|a| cfg.loss_difference(a.value, t, star) * a.mass)
        .sum()
}
