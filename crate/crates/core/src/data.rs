//! Covariate matrices and labelled datasets, with CSV ingestion.
//!
//! Datasets are stored as CSV with header `x1,...,xd,y`; bare covariate files
//! use `x1,...,xd`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("points need dimension at least 1"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: coords.len() % dim,
            });
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::domain(format!("non-finite coordinate {bad}")));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or(Error::EmptyInput("no points"))?;
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            coords.extend_from_slice(r);
        }
        Self::new(dim, coords)
    }

    /// One-dimensional points.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(1, xs.to_vec())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Rows `start..end` as a new point set.
    pub fn slice(&self, start: usize, end: usize) -> Points {
        Points {
            dim: self.dim,
            coords: self.coords[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let dim = check_covariate_header(headers.iter(), headers.len())?;
        let mut coords = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter() {
                coords.push(parse_number(field)?);
            }
        }
        Points::new(dim, coords)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.dim).map(|j| format!("x{j}")))?;
        for r in self.rows() {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_number(field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: '{field}'")))
}

fn check_covariate_header<'a>(names: impl Iterator<Item = &'a str>, count: usize) -> Result<usize> {
    for (j, name) in names.enumerate() {
        if name.trim() != format!("x{}", j + 1) {
            return Err(Error::Parse(format!("expected column 'x{}', got '{name}'", j + 1)));
        }
    }
    if count == 0 {
        return Err(Error::Parse("missing header".into()));
    }
    Ok(count)
}

/// Paired covariates and responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Points,
    y: Vec<f64>,
    declared_bound: Option<f64>,
}

impl Dataset {
    pub fn new(x: Points, y: Vec<f64>) -> Result<Self> {
        Self::with_bound(x, y, None)
    }

    /// A dataset whose responses are promised to satisfy `|y| <= bound`.
    pub fn with_bound(x: Points, y: Vec<f64>, declared_bound: Option<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyInput("dataset needs at least one sample"));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite response {bad}")));
        }
        if let Some(m) = declared_bound {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::domain(format!("declared bound must be positive, got {m}")));
            }
            if let Some(v) = y.iter().find(|v| v.abs() > m) {
                return Err(Error::domain(format!("response {v} exceeds declared bound {m}")));
            }
        }
        Ok(Self { x, y, declared_bound })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn x(&self) -> &Points {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn declared_bound(&self) -> Option<f64> {
        self.declared_bound
    }

    pub fn max_abs_response(&self) -> f64 {
        self.y.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Samples `start..end`, keeping the declared bound.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            x: self.x.slice(start, end),
            y: self.y[start..end].to_vec(),
            declared_bound: self.declared_bound,
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = headers.len();
        if cols < 2 || headers.get(cols - 1).map(str::trim) != Some("y") {
            return Err(Error::Parse("expected header 'x1,...,xd,y'".into()));
        }
        let dim = check_covariate_header(headers.iter().take(cols - 1), cols - 1)?;
        let (mut coords, mut y) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v = parse_number(field)?;
                if j + 1 == cols {
                    y.push(v);
                } else {
                    coords.push(v);
                }
            }
        }
        Dataset::new(Points::new(dim, coords)?, y)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (r, y) in self.x.rows().zip(&self.y) {
            w.write_record(r.iter().chain(std::iter::once(y)).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}
