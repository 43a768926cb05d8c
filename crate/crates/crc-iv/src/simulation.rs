//! Data-generating process and Monte Carlo study runner.
//!
//! The design draws a binary instrument `Z`, a scalar heterogeneity term
//! `V`, and random coefficients that load on `V`, so the coefficients and
//! the endogenous variable are correlated through their shared dependence
//! on `V`:
//!
//! ```text
//! X = pi Z + gamma Z V + V,    Y = B0 + B1 X,    Bj = rho_j V + eps_j.
//! ```
//!
//! With `gamma = 0` the instrument moves everyone's treatment equally and
//! two-stage least squares stays consistent for the mean slope; with
//! `gamma != 0` the instrument effect varies with `V` and only the
//! rank-conditioning estimator remains consistent for both coefficients.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ols, tsls};
use crate::dataset::{build_design, Dataset, DesignSpec};
use crate::error::{Error, Result};
use crate::estimator::estimate_beta_R;
use crate::first_stage::estimate_ranks;
use crate::pipeline::{first_stage_cdf, FirstStageConfig};
use crate::quadrature::{nodes_over, KernelSpec, NodeScheme, RSet};
use crate::rng;

/// Parameters of the simulated design.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Homogeneous instrument effect in the first stage.
    pub pi: f64,
    /// Heterogeneous instrument effect: coefficient on `Z V`.
    pub gamma: f64,
    pub v_mean: f64,
    pub v_sd: f64,
    pub rho0: f64,
    pub mu0: f64,
    pub sigma0: f64,
    pub rho1: f64,
    pub mu1: f64,
    pub sigma1: f64,
    /// Success probability of the binary instrument.
    pub z_prob: f64,
}

impl DgpSpec {
    /// The benchmark parameterization at a given first-stage heterogeneity.
    pub fn with_gamma(gamma: f64) -> Self {
        DgpSpec {
            pi: 0.2,
            gamma,
            v_mean: 0.1,
            v_sd: 0.4,
            rho0: 0.3,
            mu0: 0.2,
            sigma0: 0.2,
            rho1: 0.7,
            mu1: 0.45,
            sigma1: 1.0,
            z_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_sd <= 0.0 || self.sigma0 <= 0.0 || self.sigma1 <= 0.0 {
            return Err(Error::Config("scale parameters must be positive".into()));
        }
        if !(0.0 < self.z_prob && self.z_prob < 1.0) {
            return Err(Error::Config("z_prob must be in (0,1)".into()));
        }
        Ok(())
    }

    /// `E[B0] = rho0 v_mean + mu0`.
    pub fn mean_b0(&self) -> f64 {
        self.rho0 * self.v_mean + self.mu0
    }

    /// `E[B1] = rho1 v_mean + mu1`.
    pub fn mean_b1(&self) -> f64 {
        self.rho1 * self.v_mean + self.mu1
    }
}

/// Draw a sample of size `n`, returning the observables and the latent
/// coefficient pairs `(B0_i, B1_i)` for oracle checks.
pub fn generate(
    spec: &DgpSpec,
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Dataset, Vec<(f64, f64)>)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let zi = rng::bernoulli(rng, spec.z_prob);
        let v = rng::normal(rng, spec.v_mean, spec.v_sd);
        let e0 = rng::normal(rng, spec.mu0, spec.sigma0);
        let e1 = rng::normal(rng, spec.mu1, spec.sigma1);
        let b0 = spec.rho0 * v + e0;
        let b1 = spec.rho1 * v + e1;
        let xi = spec.pi * zi + spec.gamma * zi * v + v;
        y.push(b0 + b1 * xi);
        x.push(xi);
        z.push(zi);
        latent.push((b0, b1));
    }
    let data = Dataset::new(y, x, vec![], vec![z])?;
    Ok((data, latent))
}

/// Estimators a study can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ols,
    Tsls,
    Crc,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ols => "ols",
            EstimatorKind::Tsls => "tsls",
            EstimatorKind::Crc => "crc",
        }
    }
}

/// A Monte Carlo study: design, grid, and estimator machinery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub spec: DgpSpec,
    pub sizes: Vec<usize>,
    /// Bandwidths for the rank-conditioning estimator; ignored by the
    /// baselines.
    pub bandwidths: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub reps: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub rset: RSet,
    pub nodes: usize,
    pub scheme: NodeScheme,
    pub first_stage: FirstStageConfig,
}

impl StudyConfig {
    /// Defaults used by the simulation benchmark: empirical-CDF first
    /// stage, biweight kernel, the untrimmed rank set, 300 Halton nodes.
    pub fn new(spec: DgpSpec, sizes: Vec<usize>, bandwidths: Vec<f64>, reps: usize, seed: u64) -> Self {
        StudyConfig {
            spec,
            sizes,
            bandwidths,
            estimators: vec![EstimatorKind::Ols, EstimatorKind::Tsls, EstimatorKind::Crc],
            reps,
            seed,
            kernel: KernelSpec::Biweight,
            rset: RSet::full(),
            nodes: 300,
            scheme: NodeScheme::Halton,
            first_stage: FirstStageConfig::Ecdf,
        }
    }

    /// The full benchmark grid at one heterogeneity value:
    /// `N in {500, 1000}`, `h in {0.01, 0.03, ..., 0.15}`.
    pub fn reference_grid(gamma: f64, reps: usize, seed: u64) -> Self {
        let bandwidths = (0..8).map(|i| 0.01 + 0.02 * i as f64).collect();
        Self::new(DgpSpec::with_gamma(gamma), vec![500, 1000], bandwidths, reps, seed)
    }
}

/// Accuracy summary for one coefficient in one study cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStats {
    pub component: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Sample standard deviation across replications.
    pub std: f64,
    /// Mean squared deviation from the truth.
    pub mse: f64,
    /// Raw sums for recomputing either mse convention.
    pub sum: f64,
    pub sum_sq_dev_from_truth: f64,
}

/// One (estimator, sample size, bandwidth) cell of the study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyCell {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub h: Option<f64>,
    pub components: Vec<CellStats>,
    pub reps_used: usize,
    pub failures: usize,
}

/// The full study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub cells: Vec<StudyCell>,
    pub reps: usize,
    pub seed: u64,
}

impl StudyReport {
    pub fn find(&self, estimator: EstimatorKind, n: usize, h: Option<f64>) -> Option<&StudyCell> {
        self.cells.iter().find(|c| {
            c.estimator == estimator
                && c.n == n
                && match (c.h, h) {
                    (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                    (None, None) => true,
                    _ => false,
                }
        })
    }

    /// CSV rows: `estimator,component,N,h,bias,std,mse,reps,failures`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,component,N,h,bias,std,mse,reps,failures\n");
        for cell in &self.cells {
            for comp in &cell.components {
                let h = cell.h.map_or(String::new(), |h| format!("{h}"));
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    cell.estimator.name(),
                    comp.component,
                    cell.n,
                    h,
                    comp.bias,
                    comp.std,
                    comp.mse,
                    cell.reps_used,
                    cell.failures
                ));
            }
        }
        out
    }
}

// One replication's estimates for every cell, in cell order.
type RepRow = Vec<std::result::Result<DVector<f64>, String>>;

/// Run the study. Replications are independent and keyed by
/// `(seed, size index, replication index)`, and every reduction runs in
/// replication order, so the report is identical at any worker count.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.spec.validate()?;
    if cfg.reps < 2 {
        return Err(Error::Config("need at least 2 replications".into()));
    }
    if cfg.estimators.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    if cfg.estimators.contains(&EstimatorKind::Crc) && cfg.bandwidths.is_empty() {
        return Err(Error::Config("the crc estimator needs at least one bandwidth".into()));
    }

    // Fixed cell layout: per estimator, baselines once, crc per bandwidth.
    let mut layout: Vec<(EstimatorKind, Option<f64>)> = Vec::new();
    for &est in &cfg.estimators {
        match est {
            EstimatorKind::Ols | EstimatorKind::Tsls => layout.push((est, None)),
            EstimatorKind::Crc => {
                for &h in &cfg.bandwidths {
                    layout.push((est, Some(h)));
                }
            }
        }
    }

    let truth = [cfg.spec.mean_b0(), cfg.spec.mean_b1()];
    let names = ["intercept", "x"];
    let mut cells: Vec<StudyCell> = Vec::new();

    for (size_idx, &n) in cfg.sizes.iter().enumerate() {
        let rows: Vec<RepRow> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let stream_idx = ((size_idx as u64) << 32) | rep as u64;
                let mut rng = rng::stream(cfg.seed, stream_idx);
                let generated = generate(&cfg.spec, n, &mut rng);
                let (data, _) = match generated {
                    Ok(d) => d,
                    Err(e) => return vec![Err(e.to_string()); layout.len()],
                };
                replicate(&data, cfg, &layout)
            })
            .collect();

        for (cell_idx, &(est, h)) in layout.iter().enumerate() {
            let mut estimates: Vec<&DVector<f64>> = Vec::with_capacity(cfg.reps);
            let mut failures = 0usize;
            for row in &rows {
                match &row[cell_idx] {
                    Ok(v) => estimates.push(v),
                    Err(_) => failures += 1,
                }
            }
            let reps_used = estimates.len();
            if reps_used < 2 {
                return Err(Error::Estimation(format!(
                    "cell {} N={n} h={h:?}: only {reps_used} usable replications",
                    est.name()
                )));
            }
            let mut components = Vec::with_capacity(2);
            for (j, name) in names.iter().enumerate() {
                let sum: f64 = estimates.iter().map(|e| e[j]).sum();
                let mean = sum / reps_used as f64;
                let bias = mean - truth[j];
                let var = estimates
                    .iter()
                    .map(|e| (e[j] - mean).powi(2))
                    .sum::<f64>()
                    / (reps_used as f64 - 1.0);
                let sum_sq_dev: f64 = estimates.iter().map(|e| (e[j] - truth[j]).powi(2)).sum();
                components.push(CellStats {
                    component: name.to_string(),
                    truth: truth[j],
                    mean,
                    bias,
                    std: var.sqrt(),
                    mse: sum_sq_dev / reps_used as f64,
                    sum,
                    sum_sq_dev_from_truth: sum_sq_dev,
                });
            }
            cells.push(StudyCell {
                estimator: est,
                n,
                h,
                components,
                reps_used,
                failures,
            });
        }
    }

    Ok(StudyReport { cells, reps: cfg.reps, seed: cfg.seed })
}

fn replicate(data: &Dataset, cfg: &StudyConfig, layout: &[(EstimatorKind, Option<f64>)]) -> RepRow {
    let design = match build_design(data, &DesignSpec::empty()) {
        Ok(d) => d,
        Err(e) => return vec![Err(e.to_string()); layout.len()],
    };

    // The first stage and nodes are bandwidth free; fit them once.
    let mut ranks = None;
    let mut nodes = None;
    if layout.iter().any(|(e, _)| *e == EstimatorKind::Crc) {
        ranks = Some(
            first_stage_cdf(data, &cfg.first_stage)
                .and_then(|cdf| estimate_ranks(data, &cdf))
                .map_err(|e| e.to_string()),
        );
        nodes = Some(nodes_over(&cfg.rset, cfg.nodes, cfg.scheme).map_err(|e| e.to_string()));
    }

    layout
        .iter()
        .map(|&(est, h)| match est {
            EstimatorKind::Ols => ols(&design, data.y())
                .map(|f| f.coefficients)
                .map_err(|e| e.to_string()),
            EstimatorKind::Tsls => tsls(&design, data.y(), data)
                .map(|f| f.coefficients)
                .map_err(|e| e.to_string()),
            EstimatorKind::Crc => {
                let ranks = match ranks.as_ref().unwrap() {
                    Ok(r) => r,
                    Err(e) => return Err(e.clone()),
                };
                let nodes = match nodes.as_ref().unwrap() {
                    Ok(nd) => nd,
                    Err(e) => return Err(e.clone()),
                };
                estimate_beta_R(
                    &design,
                    data.y(),
                    ranks,
                    &cfg.rset,
                    h.unwrap(),
                    cfg.kernel,
                    nodes,
                )
                .map(|e| e.beta_r)
                .map_err(|e| e.to_string())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_coefficient_means() {
        let spec = DgpSpec::with_gamma(0.4);
        assert!((spec.mean_b0() - 0.23).abs() < 1e-15);
        assert!((spec.mean_b1() - 0.52).abs() < 1e-15);

        let mut rng = rng::stream(1234, 0);
        let n = 200_000;
        let (_, latent) = generate(&spec, n, &mut rng).unwrap();
        let m0 = latent.iter().map(|l| l.0).sum::<f64>() / n as f64;
        let m1 = latent.iter().map(|l| l.1).sum::<f64>() / n as f64;
        assert!((m0 - 0.23).abs() < 0.005, "m0 {m0}");
        assert!((m1 - 0.52).abs() < 0.01, "m1 {m1}");
    }

    #[test]
    fn homogeneous_first_stage_has_equal_cell_variances() {
        let spec = DgpSpec::with_gamma(0.0);
        let mut rng = rng::stream(5, 0);
        let (data, _) = generate(&spec, 100_000, &mut rng).unwrap();
        let mut v0 = Vec::new();
        let mut v1 = Vec::new();
        for i in 0..data.n() {
            if data.z2()[(i, 0)] == 0.0 {
                v0.push(data.x_basic()[i]);
            } else {
                v1.push(data.x_basic()[i]);
            }
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let (a, b) = (var(&v0), var(&v1));
        assert!((a / b - 1.0).abs() < 0.03, "variances {a} vs {b}");
        assert!((a / (0.4 * 0.4) - 1.0).abs() < 0.03, "cell variance {a}");
    }

    #[test]
    fn generated_sample_oracle_consistency() {
        let spec = DgpSpec::with_gamma(0.4);
        for rep in 0..5 {
            let mut rng = rng::stream(77, rep);
            let n = 4000;
            let (_, latent) = generate(&spec, n, &mut rng).unwrap();
            let m0 = latent.iter().map(|l| l.0).sum::<f64>() / n as f64;
            let m1 = latent.iter().map(|l| l.1).sum::<f64>() / n as f64;
            let bound = 4.0 / (n as f64).sqrt();
            assert!((m0 - spec.mean_b0()).abs() < bound, "rep {rep}: {m0}");
            assert!((m1 - spec.mean_b1()).abs() < bound, "rep {rep}: {m1}");
        }
    }

    #[test]
    fn small_study_deterministic_and_mse_identity() {
        let cfg = StudyConfig::new(
            DgpSpec::with_gamma(0.4),
            vec![200],
            vec![0.07],
            20,
            99,
        );
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            for (sa, sb) in ca.components.iter().zip(&cb.components) {
                assert_eq!(sa.mean.to_bits(), sb.mean.to_bits());
                assert_eq!(sa.mse.to_bits(), sb.mse.to_bits());
            }
        }
        for cell in &a.cells {
            assert_eq!(cell.failures, 0);
            for s in &cell.components {
                let r = cell.reps_used as f64;
                let identity = s.bias * s.bias + s.std * s.std * (r - 1.0) / r;
                assert!(
                    (s.mse - identity).abs() < 1e-10 * (1.0 + s.mse),
                    "mse {} vs identity {identity}",
                    s.mse
                );
                assert!(s.mse >= s.bias * s.bias - 1e-15);
            }
        }
    }

    #[test]
    fn study_csv_layout() {
        let cfg = StudyConfig::new(DgpSpec::with_gamma(0.0), vec![150], vec![0.05], 5, 3);
        let report = run_study(&cfg).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "estimator,component,N,h,bias,std,mse,reps,failures"
        );
        // ols, tsls: 2 components each; crc: 2 components per bandwidth.
        assert_eq!(csv.lines().count(), 1 + 2 + 2 + 2);
        assert!(csv.contains("crc,x,150,0.05,"));
    }
}
