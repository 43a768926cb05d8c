//! Observational data and design-matrix construction.
//!
//! A [`Dataset`] holds the outcome, one basic endogenous variable, included
//! covariates, and excluded instruments. [`build_design`] expands it into
//! the regression design `[1, X, derived terms..., Z1 columns...]`, where a
//! derived term is a power of the endogenous variable or its interaction
//! with a covariate.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-name selection for [`load_csv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub y: String,
    pub x: String,
    pub z1: Vec<String>,
    pub z2: Vec<String>,
}

/// An i.i.d. sample of (outcome, endogenous variable, covariates,
/// instruments). Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    y: DVector<f64>,
    x_basic: DVector<f64>,
    z1: DMatrix<f64>,
    z2: DMatrix<f64>,
}

impl Dataset {
    /// Validates shapes and values: every column finite, at least one
    /// instrument, more rows than parameters in either stage, and no two
    /// exactly duplicated exogenous columns.
    pub fn new(
        y: Vec<f64>,
        x_basic: Vec<f64>,
        z1_cols: Vec<Vec<f64>>,
        z2_cols: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Config("empty dataset".into()));
        }
        if x_basic.len() != n {
            return Err(Error::Config(format!(
                "x has {} rows but y has {n}",
                x_basic.len()
            )));
        }
        if z2_cols.is_empty() {
            return Err(Error::Config("at least one instrument column is required".into()));
        }
        for (name, col) in [("y", &y), ("x", &x_basic)] {
            check_finite_col(name, col, n)?;
        }
        for (j, col) in z1_cols.iter().enumerate() {
            check_finite_col(&format!("z1[{j}]"), col, n)?;
        }
        for (j, col) in z2_cols.iter().enumerate() {
            check_finite_col(&format!("z2[{j}]"), col, n)?;
        }

        // Exact duplicates among the exogenous columns make both stages
        // rank deficient by construction; reject them up front.
        let all: Vec<(&str, usize, &Vec<f64>)> = z1_cols
            .iter()
            .enumerate()
            .map(|(j, c)| ("z1", j, c))
            .chain(z2_cols.iter().enumerate().map(|(j, c)| ("z2", j, c)))
            .collect();
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                if all[i].2 == all[j].2 {
                    return Err(Error::Config(format!(
                        "columns {}[{}] and {}[{}] are exact duplicates",
                        all[i].0, all[i].1, all[j].0, all[j].1
                    )));
                }
            }
        }

        let d1 = z1_cols.len();
        let d2 = z2_cols.len();
        let d_w_min = 2 + d1;
        let d_z = d1 + d2;
        if n < d_w_min + d_z {
            return Err(Error::Config(format!(
                "need at least {} rows for {} design and {} instrument columns, got {n}",
                d_w_min + d_z,
                d_w_min,
                d_z
            )));
        }

        let z1 = DMatrix::from_fn(n, d1, |i, j| z1_cols[j][i]);
        let z2 = DMatrix::from_fn(n, d2, |i, j| z2_cols[j][i]);
        Ok(Dataset {
            n,
            y: DVector::from_vec(y),
            x_basic: DVector::from_vec(x_basic),
            z1,
            z2,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x_basic(&self) -> &DVector<f64> {
        &self.x_basic
    }

    pub fn z1(&self) -> &DMatrix<f64> {
        &self.z1
    }

    pub fn z2(&self) -> &DMatrix<f64> {
        &self.z2
    }

    pub fn d1(&self) -> usize {
        self.z1.ncols()
    }

    pub fn d2(&self) -> usize {
        self.z2.ncols()
    }

    /// All exogenous columns `[Z1 | Z2]` for observation `i`.
    pub fn z_row(&self, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.d1() + self.d2());
        row.extend(self.z1.row(i).iter().copied());
        row.extend(self.z2.row(i).iter().copied());
        row
    }

    /// Row resample (with repeats allowed), used by the bootstrap.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let m = idx.len();
        Dataset {
            n: m,
            y: DVector::from_fn(m, |i, _| self.y[idx[i]]),
            x_basic: DVector::from_fn(m, |i, _| self.x_basic[idx[i]]),
            z1: DMatrix::from_fn(m, self.d1(), |i, j| self.z1[(idx[i], j)]),
            z2: DMatrix::from_fn(m, self.d2(), |i, j| self.z2[(idx[i], j)]),
        }
    }
}

fn check_finite_col(name: &str, col: &[f64], n: usize) -> Result<()> {
    if col.len() != n {
        return Err(Error::Config(format!(
            "column {name} has {} rows, expected {n}",
            col.len()
        )));
    }
    for (i, v) in col.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Parse {
                row: i + 1,
                column: name.to_string(),
                detail: format!("non-finite value {v}"),
            });
        }
    }
    Ok(())
}

/// Load a headered CSV, selecting columns by name.
pub fn load_csv(path: &Path, columns: &ColumnMap) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();

    let mut wanted: Vec<&str> = vec![columns.y.as_str(), columns.x.as_str()];
    wanted.extend(columns.z1.iter().map(|s| s.as_str()));
    wanted.extend(columns.z2.iter().map(|s| s.as_str()));
    let mut col_idx = Vec::with_capacity(wanted.len());
    for name in &wanted {
        match index.get(name) {
            Some(&i) => col_idx.push(i),
            None => {
                return Err(Error::Config(format!(
                    "column '{name}' not found in {}",
                    path.display()
                )))
            }
        }
    }

    let mut parsed: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        for (slot, &ci) in col_idx.iter().enumerate() {
            let cell = record.get(ci).unwrap_or("");
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row_no + 1,
                column: wanted[slot].to_string(),
                detail: format!("cannot parse '{cell}' as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: row_no + 1,
                    column: wanted[slot].to_string(),
                    detail: format!("non-finite value '{cell}'"),
                });
            }
            parsed[slot].push(value);
        }
    }
    if parsed[0].is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }

    let mut it = parsed.into_iter();
    let y = it.next().unwrap();
    let x = it.next().unwrap();
    let rest: Vec<Vec<f64>> = it.collect();
    let (z1, z2) = rest.split_at(columns.z1.len());
    Dataset::new(y, x, z1.to_vec(), z2.to_vec())
}

/// One derived endogenous column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivedTerm {
    /// `X^k` for `k >= 2`.
    Power(u32),
    /// `X * Z1[j]` for a covariate column index `j`.
    Interaction(usize),
}

/// Ordered list of derived-term descriptors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub terms: Vec<DerivedTerm>,
}

impl DesignSpec {
    pub fn empty() -> Self {
        DesignSpec { terms: Vec::new() }
    }

    pub fn new(terms: Vec<DerivedTerm>) -> Result<Self> {
        for (i, t) in terms.iter().enumerate() {
            if let DerivedTerm::Power(k) = t {
                if *k < 2 {
                    return Err(Error::Config(format!(
                        "power term exponent must be >= 2, got {k}"
                    )));
                }
            }
            if terms[..i].contains(t) {
                return Err(Error::Config(format!("duplicate derived term {t:?}")));
            }
        }
        Ok(DesignSpec { terms })
    }

    /// Parse a comma list like `"x^2,x*z1:urban"` against the z1 column names.
    pub fn parse(s: &str, z1_names: &[String]) -> Result<Self> {
        let mut terms = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            if let Some(k) = part.strip_prefix("x^") {
                let k: u32 = k
                    .parse()
                    .map_err(|_| Error::Config(format!("bad power term '{part}'")))?;
                terms.push(DerivedTerm::Power(k));
            } else if let Some(name) = part.strip_prefix("x*z1:") {
                let j = z1_names.iter().position(|n| n == name).ok_or_else(|| {
                    Error::Config(format!("interaction references unknown z1 column '{name}'"))
                })?;
                terms.push(DerivedTerm::Interaction(j));
            } else {
                return Err(Error::Config(format!(
                    "cannot parse derived term '{part}' (expected x^K or x*z1:NAME)"
                )));
            }
        }
        Self::new(terms)
    }

    pub fn validate_against(&self, d1: usize) -> Result<()> {
        for t in &self.terms {
            if let DerivedTerm::Interaction(j) = t {
                if *j >= d1 {
                    return Err(Error::Config(format!(
                        "interaction index {j} out of range for {d1} z1 columns"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The regression design `W` with columns `[1, X, derived..., Z1...]`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub w: DMatrix<f64>,
    pub spec: DesignSpec,
    d1: usize,
}

impl DesignMatrix {
    pub fn d_w(&self) -> usize {
        self.w.ncols()
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Column index of the basic endogenous variable.
    pub fn x_col(&self) -> usize {
        1
    }

    /// Column index of a derived term, if present.
    pub fn term_col(&self, term: DerivedTerm) -> Option<usize> {
        self.spec.terms.iter().position(|t| *t == term).map(|p| 2 + p)
    }

    /// Column index of covariate `j` inside the design.
    pub fn z1_col(&self, j: usize) -> Option<usize> {
        (j < self.d1).then(|| 2 + self.spec.terms.len() + j)
    }

    /// Human-readable column names in design order.
    pub fn column_names(&self, z1_names: Option<&[String]>) -> Vec<String> {
        let mut names = vec!["intercept".to_string(), "x".to_string()];
        for t in &self.spec.terms {
            names.push(match t {
                DerivedTerm::Power(k) => format!("x^{k}"),
                DerivedTerm::Interaction(j) => match z1_names {
                    Some(zn) => format!("x*z1:{}", zn[*j]),
                    None => format!("x*z1[{j}]"),
                },
            });
        }
        for j in 0..self.d1 {
            names.push(match z1_names {
                Some(zn) => format!("z1:{}", zn[j]),
                None => format!("z1[{j}]"),
            });
        }
        names
    }
}

/// Expand a dataset into its design matrix, row order preserved.
pub fn build_design(data: &Dataset, spec: &DesignSpec) -> Result<DesignMatrix> {
    spec.validate_against(data.d1())?;
    let n = data.n();
    let d_w = 2 + spec.terms.len() + data.d1();
    let mut w = DMatrix::zeros(n, d_w);
    for i in 0..n {
        let x = data.x_basic()[i];
        w[(i, 0)] = 1.0;
        w[(i, 1)] = x;
        for (t, term) in spec.terms.iter().enumerate() {
            w[(i, 2 + t)] = match term {
                DerivedTerm::Power(k) => x.powi(*k as i32),
                DerivedTerm::Interaction(j) => x * data.z1()[(i, *j)],
            };
        }
        for j in 0..data.d1() {
            w[(i, 2 + spec.terms.len() + j)] = data.z1()[(i, j)];
        }
    }
    Ok(DesignMatrix {
        w,
        spec: spec.clone(),
        d1: data.d1(),
    })
}
