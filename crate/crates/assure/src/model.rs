//! Core data model: observed units, datasets, simulation ground truth, and
//! the estimator bandwidth.
//!
//! A unit is one estimation problem (Y_i, sigma_i, K_i, X_i). The context
//! available to decision rules is everything except Y: (covariates, cost,
//! sigma). Datasets are immutable after construction and safe to share across
//! threads.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// One estimation problem: observed estimate, known standard error, known
/// selection cost, and optional covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub y: f64,
    pub sigma: f64,
    pub cost: f64,
    pub covariates: Vec<f64>,
}

impl Unit {
    pub fn new(y: f64, sigma: f64, cost: f64, covariates: Vec<f64>) -> Self {
        Self { y, sigma, cost, covariates }
    }
}

/// Which observation likelihood the dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Y_i ~ N(mu_i, sigma_i^2) with known sigma_i.
    Gaussian,
    /// Y_i ~ Poisson(mu_i); sigma is meaningless and normalized to 1.
    Poisson,
}

/// An ordered, validated collection of units with a common covariate
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    units: Vec<Unit>,
    covariate_dim: usize,
    mode: Mode,
}

/// Reject n < 3: the automatic bandwidth needs log n bounded away from 0.
const MIN_UNITS: usize = 3;

impl Dataset {
    /// Validates and wraps pre-built units. Poisson mode additionally
    /// requires non-negative integer y and rewrites sigma to 1.
    pub fn from_units(units: Vec<Unit>, mode: Mode) -> Result<Self> {
        Self::build(units, mode, None)
    }

    /// `line_of(i)`: source line of unit i, for error messages that point
    /// back into the file being loaded.
    fn build(mut units: Vec<Unit>, mode: Mode, line_of: Option<&dyn Fn(usize) -> u64>) -> Result<Self> {
        if units.len() < MIN_UNITS {
            return Err(Error::precondition(format!(
                "dataset needs at least {MIN_UNITS} units, got {}",
                units.len()
            )));
        }
        let locate = |i: usize| match line_of {
            Some(f) => format!("line {}", f(i)),
            None => format!("unit {i}"),
        };
        let covariate_dim = units[0].covariates.len();
        for (i, u) in units.iter().enumerate() {
            if u.covariates.len() != covariate_dim {
                return Err(Error::domain(format!(
                    "{}: expected {covariate_dim} covariates, got {}",
                    locate(i),
                    u.covariates.len()
                )));
            }
            if !u.y.is_finite() || !u.cost.is_finite() || u.covariates.iter().any(|x| !x.is_finite())
            {
                return Err(Error::domain(format!("{}: non-finite value", locate(i))));
            }
            match mode {
                Mode::Gaussian => {
                    if !(u.sigma > 0.0) || !u.sigma.is_finite() {
                        return Err(Error::domain(format!(
                            "{}: sigma must be finite and > 0, got {}",
                            locate(i),
                            u.sigma
                        )));
                    }
                }
                Mode::Poisson => {
                    if u.y < 0.0 || u.y.fract() != 0.0 {
                        return Err(Error::domain(format!(
                            "{}: Poisson mode needs a non-negative integer count, got y = {}",
                            locate(i),
                            u.y
                        )));
                    }
                }
            }
        }
        if mode == Mode::Poisson {
            for u in &mut units {
                u.sigma = 1.0;
            }
        }
        Ok(Self { units, covariate_dim, mode })
    }

    /// Loads a dataset from CSV with header columns `y`, `sigma`, `k` and
    /// optional covariates `x1..xp` (any column order, no extras).
    pub fn from_csv<R: Read>(reader: R, mode: Mode) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(reader);

        let headers = rdr
            .headers()
            .map_err(|e| Error::csv(format!("cannot read header row: {e}")))?
            .clone();
        let mut y_col = None;
        let mut sigma_col = None;
        let mut k_col = None;
        let mut x_cols: Vec<(usize, usize)> = Vec::new(); // (covariate index, column)
        for (col, name) in headers.iter().enumerate() {
            match name {
                "y" => y_col = Some(col),
                "sigma" => sigma_col = Some(col),
                "k" => k_col = Some(col),
                _ => {
                    let idx: Option<usize> = name
                        .strip_prefix('x')
                        .and_then(|s| s.parse().ok())
                        .filter(|&i| i >= 1);
                    match idx {
                        Some(i) => x_cols.push((i, col)),
                        None => {
                            return Err(Error::csv(format!(
                                "unknown column `{name}`; expected y, sigma, k, x1..xp"
                            )))
                        }
                    }
                }
            }
        }
        let y_col = y_col.ok_or_else(|| Error::csv("missing required column `y`"))?;
        let sigma_col = sigma_col.ok_or_else(|| Error::csv("missing required column `sigma`"))?;
        let k_col = k_col.ok_or_else(|| Error::csv("missing required column `k`"))?;
        x_cols.sort_unstable();
        for (want, &(got, _)) in (1..).zip(&x_cols) {
            if got != want {
                return Err(Error::csv(format!(
                    "covariate columns must be x1..x{} with no gaps; missing `x{want}`",
                    x_cols.len()
                )));
            }
        }

        let parse = |record: &csv::StringRecord, col: usize, name: &str, line: u64| -> Result<f64> {
            let cell = record.get(col).ok_or_else(|| {
                Error::csv(format!("line {line}: row has no `{name}` field"))
            })?;
            cell.parse::<f64>().map_err(|_| {
                Error::csv(format!("line {line}: column `{name}` is not numeric: `{cell}`"))
            })
        };

        let mut units = Vec::new();
        let mut lines = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| match e.position() {
                Some(p) => Error::csv(format!("line {}: {e}", p.line())),
                None => Error::csv(e.to_string()),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let y = parse(&record, y_col, "y", line)?;
            let sigma = parse(&record, sigma_col, "sigma", line)?;
            let cost = parse(&record, k_col, "k", line)?;
            let covariates = x_cols
                .iter()
                .map(|&(i, col)| parse(&record, col, &format!("x{i}"), line))
                .collect::<Result<Vec<f64>>>()?;
            units.push(Unit::new(y, sigma, cost, covariates));
            lines.push(line);
        }
        Self::build(units, mode, Some(&|i| lines[i]))
    }

    pub fn from_csv_path(path: &std::path::Path, mode: Mode) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_csv(std::io::BufReader::new(file), mode)
    }

    /// Writes the fixed column order y,sigma,k,x1..xp with shortest
    /// round-trip float formatting, so load(to_csv(d)) == d bit for bit.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "sigma".into(), "k".into()];
        header.extend((1..=self.covariate_dim).map(|i| format!("x{i}")));
        w.write_record(&header).map_err(|e| Error::csv(e.to_string()))?;
        for u in &self.units {
            let mut row = vec![u.y.to_string(), u.sigma.to_string(), u.cost.to_string()];
            row.extend(u.covariates.iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(|e| Error::csv(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }
}

/// True means, known only in simulation; used for oracle welfare scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    mu: Vec<f64>,
}

impl GroundTruth {
    pub fn new(mu: Vec<f64>, n: usize) -> Result<Self> {
        if mu.len() != n {
            return Err(Error::precondition(format!(
                "ground truth has {} entries for {n} units",
                mu.len()
            )));
        }
        if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
            return Err(Error::domain(format!("ground truth mu[{i}] is not finite")));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
}

/// Kernel bandwidth h in (0, 1] and its reciprocal frequency cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    h: f64,
    lambda: f64,
}

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::precondition(format!(
                "bandwidth must lie in (0, 1], got {h}"
            )));
        }
        Ok(Self { h, lambda: 1.0 / h })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// The estimator's default bandwidth h = 1/sqrt(2 ln n).
pub fn auto_bandwidth(n: usize) -> Result<Bandwidth> {
    if n < MIN_UNITS {
        return Err(Error::precondition(format!(
            "bandwidth formula needs n >= {MIN_UNITS}, got {n}"
        )));
    }
    Bandwidth::new(1.0 / (2.0 * (n as f64).ln()).sqrt())
}
