//! Conditional-rank estimation.
//!
//! The estimator needs each observation's conditional rank, the value of the
//! conditional distribution of the endogenous variable given the exogenous
//! variables at the observed point. Two routes are provided: a grid of
//! linear quantile regressions turned into a proper CDF by counting grid
//! levels whose predicted quantile falls below the query point (which
//! monotonizes non-monotone coefficient processes for free), and the
//! cell-wise empirical CDF for small discrete conditioning sets.

pub mod pinball;

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use pinball::DesignRows;

/// Quantile-regression coefficients on a grid of levels.
#[derive(Debug, Clone)]
pub struct QuantileProcess {
    grid: Vec<f64>,
    coeffs: Vec<DVector<f64>>,
}

impl QuantileProcess {
    pub fn new(grid: Vec<f64>, coeffs: Vec<DVector<f64>>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Config("quantile grid needs at least 2 levels".into()));
        }
        if grid.len() != coeffs.len() {
            return Err(Error::Config("grid and coefficient counts differ".into()));
        }
        for w in grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("quantile grid must be strictly increasing".into()));
            }
        }
        if grid[0] <= 0.0 || *grid.last().unwrap() >= 1.0 {
            return Err(Error::Config("quantile grid must stay inside (0,1)".into()));
        }
        let p = coeffs[0].len();
        for c in &coeffs {
            if c.len() != p || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("invalid quantile coefficient vector".into()));
            }
        }
        Ok(QuantileProcess { grid, coeffs })
    }

    pub fn levels(&self) -> &[f64] {
        &self.grid
    }

    pub fn coefficients(&self) -> &[DVector<f64>] {
        &self.coeffs
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    /// Predicted quantile `(1, z')·coef_j` at grid slot `j`.
    pub fn predict(&self, j: usize, z: &[f64]) -> f64 {
        let c = &self.coeffs[j];
        debug_assert_eq!(c.len(), z.len() + 1);
        let mut q = c[0];
        for (l, zl) in z.iter().enumerate() {
            q += c[l + 1] * zl;
        }
        q
    }
}

/// Estimated conditional ranks, one per observation, each in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct RankVector {
    r_hat: Vec<f64>,
}

impl RankVector {
    pub fn new(r_hat: Vec<f64>) -> Result<Self> {
        for (i, r) in r_hat.iter().enumerate() {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::Estimation(format!(
                    "rank {r} for observation {i} is outside [0,1]"
                )));
            }
        }
        Ok(RankVector { r_hat })
    }

    pub fn values(&self) -> &[f64] {
        &self.r_hat
    }

    pub fn len(&self) -> usize {
        self.r_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_hat.is_empty()
    }
}

fn qr_design(data: &Dataset) -> DesignRows {
    let d1 = data.d1();
    let d2 = data.d2();
    DesignRows::from_fn(data.n(), 1 + d1 + d2, |i, j| {
        if j == 0 {
            1.0
        } else if j <= d1 {
            data.z1()[(i, j - 1)]
        } else {
            data.z2()[(i, j - 1 - d1)]
        }
    })
}

/// Minimize the check loss of the endogenous variable on `(1, Z)` at level
/// `tau`. The returned coefficients carry a verified subgradient
/// certificate; see [`pinball::fit`].
pub fn fit_quantile_regression(data: &Dataset, tau: f64) -> Result<DVector<f64>> {
    let design = qr_design(data);
    let x: Vec<f64> = data.x_basic().iter().copied().collect();
    let fit = pinball::fit(&design, &x, tau, None)?;
    Ok(DVector::from_vec(fit.coef))
}

/// Levels are fit in fixed-size chunks; within a chunk each level warm
/// starts from its neighbor, and chunks run in parallel. The chunk layout
/// is independent of the worker count, so output is deterministic.
const PROCESS_CHUNK: usize = 64;

/// Fit the whole coefficient process on the equally spaced grid
/// `s_j = j / (J + 1)`, `j = 1..J`.
pub fn fit_quantile_process(data: &Dataset, grid_size: usize) -> Result<QuantileProcess> {
    if grid_size < 2 {
        return Err(Error::Config("quantile grid needs at least 2 levels".into()));
    }
    let design = qr_design(data);
    let x: Vec<f64> = data.x_basic().iter().copied().collect();
    let grid: Vec<f64> = (1..=grid_size)
        .map(|j| j as f64 / (grid_size as f64 + 1.0))
        .collect();

    let chunks: Vec<&[f64]> = grid.chunks(PROCESS_CHUNK).collect();
    let fitted: Result<Vec<Vec<DVector<f64>>>> = chunks
        .par_iter()
        .enumerate()
        .map(|(ci, levels)| {
            let mut out = Vec::with_capacity(levels.len());
            let mut warm: Option<Vec<usize>> = None;
            for (li, &tau) in levels.iter().enumerate() {
                let fit = pinball::fit(&design, &x, tau, warm.as_deref()).map_err(|e| {
                    Error::Estimation(format!(
                        "quantile fit failed at level {} (grid slot {}): {e}",
                        tau,
                        ci * PROCESS_CHUNK + li + 1
                    ))
                })?;
                warm = Some(fit.basis.clone());
                out.push(DVector::from_vec(fit.coef));
            }
            Ok(out)
        })
        .collect();

    let coeffs: Vec<DVector<f64>> = fitted?.into_iter().flatten().collect();
    QuantileProcess::new(grid, coeffs)
}

/// Share of grid levels whose predicted quantile lies at or below `x`:
/// the grid version of the pre-rearrangement operator. Nondecreasing in
/// `x` by construction, even when the coefficient process is not monotone.
pub fn rearranged_cdf(process: &QuantileProcess, x: f64, z: &[f64]) -> f64 {
    let j = process.grid_size();
    let count = (0..j).filter(|&s| process.predict(s, z) <= x).count();
    count as f64 / j as f64
}

/// Cell-wise empirical conditional CDF for exactly matching `z` rows.
#[derive(Debug, Clone)]
pub struct EmpiricalCells {
    cells: HashMap<Vec<u64>, Vec<f64>>,
}

fn z_key(z: &[f64]) -> Vec<u64> {
    z.iter().map(|v| v.to_bits()).collect()
}

impl EmpiricalCells {
    pub fn from_dataset(data: &Dataset) -> Self {
        let mut cells: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
        for i in 0..data.n() {
            cells
                .entry(z_key(&data.z_row(i)))
                .or_default()
                .push(data.x_basic()[i]);
        }
        for xs in cells.values_mut() {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        EmpiricalCells { cells }
    }

    pub fn eval(&self, x: f64, z: &[f64]) -> Result<f64> {
        match self.cells.get(&z_key(z)) {
            Some(xs) => {
                let count = xs.partition_point(|v| *v <= x);
                Ok(count as f64 / xs.len() as f64)
            }
            None => Err(Error::Estimation(format!(
                "no observations in the conditioning cell z = {z:?}"
            ))),
        }
    }
}

/// Empirical conditional CDF `#{X_i <= x, Z_i = z} / #{Z_i = z}`.
pub fn empirical_cdf(data: &Dataset, x: f64, z: &[f64]) -> Result<f64> {
    EmpiricalCells::from_dataset(data).eval(x, z)
}

/// A conditional CDF estimate, evaluable at any `(x, z)` pair.
#[derive(Debug, Clone)]
pub enum ConditionalCdf {
    Rearranged(QuantileProcess),
    Empirical(EmpiricalCells),
}

impl ConditionalCdf {
    pub fn rearranged(process: QuantileProcess) -> Self {
        ConditionalCdf::Rearranged(process)
    }

    pub fn empirical(data: &Dataset) -> Self {
        ConditionalCdf::Empirical(EmpiricalCells::from_dataset(data))
    }

    pub fn eval(&self, x: f64, z: &[f64]) -> Result<f64> {
        match self {
            ConditionalCdf::Rearranged(p) => Ok(rearranged_cdf(p, x, z)),
            ConditionalCdf::Empirical(cells) => cells.eval(x, z),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConditionalCdf::Rearranged(_) => "qr",
            ConditionalCdf::Empirical(_) => "ecdf",
        }
    }
}

/// Conditional ranks: the fitted CDF evaluated at each observation's own
/// `(X_i, Z_i)`.
pub fn estimate_ranks(data: &Dataset, cdf: &ConditionalCdf) -> Result<RankVector> {
    let ranks: Result<Vec<f64>> = (0..data.n())
        .map(|i| cdf.eval(data.x_basic()[i], &data.z_row(i)))
        .collect();
    RankVector::new(ranks?)
}
