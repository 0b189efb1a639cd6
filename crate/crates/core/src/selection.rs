//! Hyperparameter grids and training/validation selection (TV-SVM).
//!
//! The sample is split in order into a training part of `floor(n/2) + 1`
//! points and a validation part with the rest. Every `(lambda, gamma)` cell is
//! fitted on the training part and scored by the clipped empirical ALS risk on
//! the validation part; the cell with the smallest score wins.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::AlsConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{gram, GaussianKernel};
use crate::solver::{fit_gram, ExpectileModel, FitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Literal nets of `(0, 1]`: radius `1/n` for lambda and
    /// `n^(-1/(2 alpha + d))` for gamma. `O(n)` cells.
    StrictNet,
    /// 15 geometric lambdas times 10 geometric gammas.
    Practical,
}

impl std::str::FromStr for GridMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict_net" | "strict-net" | "strict" => Ok(GridMode::StrictNet),
            "practical" => Ok(GridMode::Practical),
            other => Err(Error::Unknown { kind: "grid mode", name: other.to_string() }),
        }
    }
}

/// Candidate values, both strictly decreasing in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lambdas: Vec<f64>,
    gammas: Vec<f64>,
    mode: GridMode,
}

fn normalize_axis(mut values: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("grid axis is empty"));
    }
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::domain(format!("{what} grid value {v} outside (0, 1]")));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    values.dedup();
    Ok(values)
}

impl GridSpec {
    /// A user grid. Values are sorted decreasing and duplicates dropped.
    pub fn custom(lambdas: Vec<f64>, gammas: Vec<f64>) -> Result<Self> {
        Ok(Self {
            lambdas: normalize_axis(lambdas, "lambda")?,
            gammas: normalize_axis(gammas, "gamma")?,
            mode: GridMode::Practical,
        })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    pub fn cells(&self) -> usize {
        self.lambdas.len() * self.gammas.len()
    }
}

/// Radius of the gamma net for sample size `n`: `n^(-1/(2 alpha + d))`.
pub fn gamma_net_radius(n: usize, alpha: f64, d: usize) -> f64 {
    (n as f64).powf(-1.0 / (2.0 * alpha + d as f64))
}

/// Net of `(0, 1]` with the given radius: points `1, 1 - 2r, 1 - 4r, ...`
/// while positive, plus `r` itself when the smallest point exceeds `r`.
fn net(radius: f64) -> Vec<f64> {
    let mut pts = Vec::new();
    let mut k = 0u64;
    loop {
        let v = 1.0 - 2.0 * radius * k as f64;
        if v <= 0.0 {
            break;
        }
        pts.push(v);
        k += 1;
    }
    if pts.last().is_some_and(|&s| s > radius) {
        pts.push(radius);
    }
    pts
}

fn geometric(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    let ratio = (lo / hi).powf(1.0 / (count - 1) as f64);
    (0..count)
        .map(|k| if k == 0 { hi } else if k + 1 == count { lo } else { hi * ratio.powi(k as i32) })
        .collect()
}

pub fn make_grids(n: usize, alpha: f64, d: usize, mode: GridMode) -> Result<GridSpec> {
    if n < 4 {
        return Err(Error::domain(format!("grids need n >= 4, got {n}")));
    }
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(Error::domain(format!("alpha must be at least 1, got {alpha}")));
    }
    if d == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    let delta = gamma_net_radius(n, alpha, d);
    let (lambdas, gammas) = match mode {
        GridMode::StrictNet => (net(1.0 / n as f64), net(delta)),
        GridMode::Practical => (geometric(1.0, 1e-2 / n as f64, 15), geometric(1.0, 0.25 * delta, 10)),
    };
    Ok(GridSpec {
        lambdas: normalize_axis(lambdas, "lambda")?,
        gammas: normalize_axis(gammas, "gamma")?,
        mode,
    })
}

/// Largest distance from a uniform probe `k / probes` (`k = 1..=probes`) of
/// `(0, 1]` to the nearest grid point.
pub fn covering_radius(points: &[f64], probes: usize) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..=probes)
        .map(|k| {
            let p = k as f64 / probes as f64;
            let idx = sorted.partition_point(|&v| v < p);
            let mut best = f64::INFINITY;
            if idx < sorted.len() {
                best = best.min(sorted[idx] - p);
            }
            if idx > 0 {
                best = best.min(p - sorted[idx - 1]);
            }
            best
        })
        .fold(0.0, f64::max)
}

/// Splits `data` in order into `floor(n/2) + 1` training and `n - m`
/// validation samples.
pub fn split(data: &Dataset) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 4 {
        return Err(Error::domain(format!("training/validation split needs n >= 4, got {n}")));
    }
    let m = n / 2 + 1;
    Ok((data.slice(0, m), data.slice(m, n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationCell {
    pub lambda: f64,
    pub gamma: f64,
    /// Clipped validation risk; `None` when the fit failed.
    pub risk: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TvSvmResult {
    pub chosen_lambda: f64,
    pub chosen_gamma: f64,
    /// Fitted on the training part with the chosen pair.
    pub model: ExpectileModel,
    /// Cells in grid order: lambda-major, gamma-minor.
    pub validation_table: Vec<ValidationCell>,
}

impl TvSvmResult {
    pub fn chosen_risk(&self) -> f64 {
        self.validation_table
            .iter()
            .find(|c| c.lambda == self.chosen_lambda && c.gamma == self.chosen_gamma)
            .and_then(|c| c.risk)
            .unwrap_or(f64::NAN)
    }

    /// CSV `lambda,gamma,risk`; failed cells have an empty risk.
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "gamma", "risk"])?;
        for c in &self.validation_table {
            w.write_record([
                c.lambda.to_string(),
                c.gamma.to_string(),
                c.risk.map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// True when `a` should replace `b` as the selected cell: smaller risk, ties
/// broken toward larger lambda, then larger gamma.
fn better(a: &ValidationCell, b: &ValidationCell) -> bool {
    match (a.risk, b.risk) {
        (Some(_), None) => true,
        (None, _) => false,
        (Some(ra), Some(rb)) => {
            if ra != rb {
                ra < rb
            } else if a.lambda != b.lambda {
                a.lambda > b.lambda
            } else {
                a.gamma > b.gamma
            }
        }
    }
}

/// Training/validation selection over `grids`.
pub fn tv_svm(data: &Dataset, tau: f64, grids: &GridSpec) -> Result<TvSvmResult> {
    let tau_cfg = AlsConfig::new(tau)?;
    let (train, validation) = split(data)?;

    // One Gram matrix per gamma; cells for a gamma share it.
    let per_gamma: Vec<Vec<(ValidationCell, Option<ExpectileModel>)>> = grids
        .gammas
        .par_iter()
        .map(|&gamma| {
            let kernel = match GaussianKernel::new(gamma) {
                Ok(k) => k,
                Err(_) => return failed_column(&grids.lambdas, gamma),
            };
            let g = match gram(kernel, train.x()) {
                Ok(g) => g,
                Err(_) => return failed_column(&grids.lambdas, gamma),
            };
            grids
                .lambdas
                .iter()
                .map(|&lambda| {
                    let fitted = FitConfig::new(tau, lambda, gamma)
                        .and_then(|cfg| fit_gram(&g, &train, &cfg))
                        .and_then(|m| {
                            let risk = match m.clip_level() {
                                Some(_) => m.empirical_risk(&validation, tau_cfg, true)?,
                                None => m.empirical_risk(&validation, tau_cfg, false)?,
                            };
                            Ok((risk, m))
                        });
                    match fitted {
                        Ok((risk, m)) if risk.is_finite() => {
                            (ValidationCell { lambda, gamma, risk: Some(risk) }, Some(m))
                        }
                        _ => (ValidationCell { lambda, gamma, risk: None }, None),
                    }
                })
                .collect()
        })
        .collect();

    let mut table = Vec::with_capacity(grids.cells());
    let mut models: Vec<Option<ExpectileModel>> = Vec::with_capacity(grids.cells());
    let mut columns: Vec<_> = per_gamma.into_iter().map(|c| c.into_iter()).collect();
    for _ in &grids.lambdas {
        for col in columns.iter_mut() {
            let (cell, model) = col.next().expect("one cell per lambda");
            table.push(cell);
            models.push(model);
        }
    }

    let mut best: Option<usize> = None;
    for (i, cell) in table.iter().enumerate() {
        if cell.risk.is_none() {
            continue;
        }
        if best.is_none_or(|b| better(cell, &table[b])) {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("every grid cell failed to fit".into()))?;
    let model = models[best].take().expect("successful cell keeps its model");
    Ok(TvSvmResult {
        chosen_lambda: table[best].lambda,
        chosen_gamma: table[best].gamma,
        model,
        validation_table: table,
    })
}

fn failed_column(lambdas: &[f64], gamma: f64) -> Vec<(ValidationCell, Option<ExpectileModel>)> {
    lambdas
        .iter()
        .map(|&lambda| (ValidationCell { lambda, gamma, risk: None }, None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Points;
    use approx::assert_abs_diff_eq;

    fn linear(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 / n as f64).collect();
        let y = xs.iter().map(|x| 1.5 * x - 0.5).collect();
        Dataset::new(Points::from_scalars(&xs).unwrap(), y).unwrap()
    }

    #[test]
    fn split_sizes() {
        for (n, m) in [(4, 3), (100, 51), (101, 51)] {
            let d = linear(n);
            let (a, b) = split(&d).unwrap();
            assert_eq!(a.len(), m);
            assert_eq!(b.len(), n - m);
        }
        assert!(split(&linear(3)).is_err());
    }

    #[test]
    fn split_is_an_ordered_partition() {
        let d = linear(9);
        let (a, b) = split(&d).unwrap();
        let joined: Vec<f64> = a.y().iter().chain(b.y()).copied().collect();
        assert_eq!(joined, d.y());
        let coords: Vec<f64> = a.x().coords().iter().chain(b.x().coords()).copied().collect();
        assert_eq!(coords, d.x().coords());
    }

    #[test]
    fn strict_lambda_grid_small_n() {
        let g = make_grids(10, 1.0, 1, GridMode::StrictNet).unwrap();
        let expected = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1];
        assert_eq!(g.lambdas().len(), expected.len());
        for (a, b) in g.lambdas().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(g.lambdas().iter().any(|&l| (0.1 / 3.0..=0.3).contains(&l)));
    }

    #[test]
    fn strict_gamma_grid_is_a_net() {
        let g = make_grids(16, 1.0, 1, GridMode::StrictNet).unwrap();
        let delta = 16f64.powf(-1.0 / 3.0);
        assert_abs_diff_eq!(g.gammas()[0] - g.gammas()[1], 2.0 * delta, epsilon = 1e-12);
        assert!(covering_radius(g.gammas(), 100_000) <= delta + 1e-12);
    }

    #[test]
    fn strict_nets_pass_bruteforce_verifier() {
        for n in [4, 5, 10, 16, 33, 100] {
            for d in 1..=3 {
                let g = make_grids(n, 2.0, d, GridMode::StrictNet).unwrap();
                assert!(covering_radius(g.lambdas(), 100_000) <= 1.0 / n as f64 + 1e-12, "n={n}");
                assert!(covering_radius(g.gammas(), 100_000) <= gamma_net_radius(n, 2.0, d) + 1e-12);
                assert!(g.lambdas().windows(2).all(|w| w[0] > w[1]));
                assert!(g.gammas().windows(2).all(|w| w[0] > w[1]));
                assert_eq!(g.lambdas()[0], 1.0);
            }
        }
    }

    #[test]
    fn practical_grid_shape() {
        let g = make_grids(200, 3.0, 2, GridMode::Practical).unwrap();
        assert_eq!(g.cells(), 150);
        assert_eq!(g.lambdas()[0], 1.0);
        assert_abs_diff_eq!(*g.lambdas().last().unwrap(), 1e-2 / 200.0, epsilon = 1e-18);
        assert_abs_diff_eq!(*g.gammas().last().unwrap(), 0.25 * gamma_net_radius(200, 3.0, 2), epsilon = 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(make_grids(3, 1.0, 1, GridMode::Practical).is_err());
        assert!(make_grids(10, 0.5, 1, GridMode::Practical).is_err());
        assert!(make_grids(10, 1.0, 0, GridMode::Practical).is_err());
        assert!(GridSpec::custom(vec![], vec![0.5]).is_err());
        assert!(GridSpec::custom(vec![1.5], vec![0.5]).is_err());
        let g = GridSpec::custom(vec![0.1, 0.5, 0.1], vec![0.3]).unwrap();
        assert_eq!(g.lambdas(), &[0.5, 0.1]);
        assert_eq!("strict_net".parse::<GridMode>().unwrap(), GridMode::StrictNet);
        assert!("x".parse::<GridMode>().is_err());
    }

    #[test]
    fn single_cell_is_returned() {
        let g = GridSpec::custom(vec![0.5], vec![0.9]).unwrap();
        let r = tv_svm(&linear(20), 0.5, &g).unwrap();
        assert_eq!((r.chosen_lambda, r.chosen_gamma), (0.5, 0.9));
        assert_eq!(r.validation_table.len(), 1);
    }

    #[test]
    fn duplicates_match_deduplicated() {
        let d = linear(30);
        let a = tv_svm(&d, 0.7, &GridSpec::custom(vec![0.1, 1e-3, 0.1], vec![0.5, 0.2, 0.5]).unwrap()).unwrap();
        let b = tv_svm(&d, 0.7, &GridSpec::custom(vec![0.1, 1e-3], vec![0.5, 0.2]).unwrap()).unwrap();
        assert_eq!((a.chosen_lambda, a.chosen_gamma), (b.chosen_lambda, b.chosen_gamma));
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn chosen_cell_minimizes_table_and_beats_zero_predictor() {
        let d = linear(60);
        let grids = make_grids(60, 1.0, 1, GridMode::Practical).unwrap();
        let r = tv_svm(&d, 0.5, &grids).unwrap();
        let min = r.validation_table.iter().filter_map(|c| c.risk).fold(f64::INFINITY, f64::min);
        assert_eq!(r.chosen_risk(), min);
        let (_, val) = split(&d).unwrap();
        let tau = AlsConfig::new(0.5).unwrap();
        let zero = crate::solver::empirical_risk(|_| 0.0, &val, tau);
        assert!(r.chosen_risk() <= zero);
        let recomputed = r.model.empirical_risk(&val, tau, true).unwrap();
        assert_eq!(recomputed, r.chosen_risk());
    }

    #[test]
    fn tie_break_prefers_larger_lambda_then_gamma() {
        let mk = |lambda, gamma, risk| ValidationCell { lambda, gamma, risk: Some(risk) };
        assert!(better(&mk(0.5, 0.1, 1.0), &mk(0.1, 0.9, 1.0)));
        assert!(better(&mk(0.5, 0.9, 1.0), &mk(0.5, 0.1, 1.0)));
        assert!(better(&mk(0.1, 0.1, 0.5), &mk(0.5, 0.9, 1.0)));
        assert!(!better(&ValidationCell { lambda: 1.0, gamma: 1.0, risk: None }, &mk(0.1, 0.1, 9.0)));
    }

    #[test]
    fn table_csv_header() {
        let r = tv_svm(&linear(8), 0.5, &GridSpec::custom(vec![0.5], vec![0.5]).unwrap()).unwrap();
        let mut buf = Vec::new();
        r.write_table_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("lambda,gamma,risk\n0.5,0.5,"));
    }
}
