//! Local coefficient fits and their trimmed average.
//!
//! At a rank value `r`, the coefficient vector is estimated by weighted
//! least squares with kernel weights in the estimated ranks,
//!
//! ```text
//! beta(r) = ( (1/n) sum_i k_i(r) W_i W_i' )^+  ( (1/n) sum_i k_i(r) W_i Y_i )
//! ```
//!
//! using the Moore-Penrose inverse because the weighted Gram matrix can be
//! rank deficient in small windows. The trimmed average is the equal-weight
//! mean of `beta(r)` over measure-preserving quadrature nodes covering the
//! rank set, which converges to the normalized integral over the set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DerivedTerm, DesignMatrix, DesignSpec};
use crate::error::{Error, Result};
use crate::first_stage::{ConditionalCdf, RankVector};
use crate::quadrature::{kernel_eval, KernelSpec, QuadratureNodes, RSet};

/// Relative singular-value cutoff below which a weighted Gram matrix is
/// flagged as rank deficient.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse by SVD; singular values below
/// `tol * max_singular_value` are zeroed.
pub fn pinv(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in pinv input".into()));
    }
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let cutoff = tol * max_sv;
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let mut sinv = DMatrix::zeros(v_t.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        sinv[(i, i)] = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
    }
    Ok(v_t.transpose() * sinv * u.transpose())
}

/// A weighted least-squares fit localized at one rank value.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub r: f64,
    pub beta: DVector<f64>,
    /// `(1/n) sum_i k_i(r) W_i W_i'`.
    pub gram: DMatrix<f64>,
    /// Set when the smallest singular value of the Gram matrix falls below
    /// `SINGULAR_TOL` times the largest; the fit is then the minimum-norm
    /// solution rather than unique.
    pub singular: bool,
    /// Observations with strictly positive kernel weight.
    pub effective_n: usize,
}

/// Observations sorted by rank so a kernel window is a contiguous slice.
struct RankWindows {
    ranks: Vec<f64>,
    rows: Vec<f64>, // row-major W, reordered
    y: Vec<f64>,
    d_w: usize,
    n: usize,
}

impl RankWindows {
    fn new(design: &DesignMatrix, y: &DVector<f64>, ranks: &RankVector) -> Result<Self> {
        let n = design.n();
        let d_w = design.d_w();
        if y.len() != n || ranks.len() != n {
            return Err(Error::Config(format!(
                "inconsistent dimensions: design {n} rows, y {}, ranks {}",
                y.len(),
                ranks.len()
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ranks.values()[a].partial_cmp(&ranks.values()[b]).unwrap());
        let mut rows = Vec::with_capacity(n * d_w);
        let mut ys = Vec::with_capacity(n);
        let mut rs = Vec::with_capacity(n);
        for &i in &order {
            for j in 0..d_w {
                rows.push(design.w[(i, j)]);
            }
            ys.push(y[i]);
            rs.push(ranks.values()[i]);
        }
        Ok(RankWindows { ranks: rs, rows, y: ys, d_w, n })
    }

    fn fit_at(&self, r: f64, h: f64, kernel: KernelSpec) -> LocalFit {
        let d = self.d_w;
        let lo = self.ranks.partition_point(|&v| v < r - h);
        let hi = self.ranks.partition_point(|&v| v <= r + h);
        let mut gram = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        let mut effective_n = 0usize;
        for i in lo..hi {
            let w = kernel_eval(kernel, (self.ranks[i] - r) / h) / h;
            if w <= 0.0 {
                continue;
            }
            effective_n += 1;
            let row = &self.rows[i * d..(i + 1) * d];
            for a in 0..d {
                let wa = w * row[a];
                rhs[a] += wa * self.y[i];
                for b in a..d {
                    gram[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let scale = 1.0 / self.n as f64;
        gram *= scale;
        rhs *= scale;

        let svd = gram.clone().svd(true, true);
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        let singular = max_sv <= 0.0 || min_sv < SINGULAR_TOL * max_sv;
        let cutoff = SINGULAR_TOL * max_sv;
        let u = svd.u.as_ref().unwrap();
        let v_t = svd.v_t.as_ref().unwrap();
        // beta = V S^+ U' rhs, the minimum-norm solution when singular.
        let mut ut_rhs = u.transpose() * &rhs;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            ut_rhs[i] = if s > cutoff && s > 0.0 { ut_rhs[i] / s } else { 0.0 };
        }
        let beta = v_t.transpose() * ut_rhs;

        LocalFit { r, beta, gram, singular, effective_n }
    }
}

/// Estimate the coefficient vector local to rank `r`.
pub fn local_beta(
    design: &DesignMatrix,
    y: &DVector<f64>,
    ranks: &RankVector,
    r: f64,
    h: f64,
    kernel: KernelSpec,
) -> Result<LocalFit> {
    if h <= 0.0 {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    Ok(RankWindows::new(design, y, ranks)?.fit_at(r, h, kernel))
}

/// The trimmed-average estimate with its diagnostics.
#[derive(Debug, Clone)]
pub struct CrcEstimate {
    pub beta_r: DVector<f64>,
    pub rset: RSet,
    pub bandwidth: f64,
    pub nodes_used: usize,
    pub singular_nodes: usize,
    pub per_node: Option<Vec<LocalFit>>,
}

impl CrcEstimate {
    pub fn singular_node_fraction(&self) -> f64 {
        self.singular_nodes as f64 / self.nodes_used as f64
    }
}

fn estimate_impl(
    design: &DesignMatrix,
    y: &DVector<f64>,
    ranks: &RankVector,
    rset: &RSet,
    h: f64,
    kernel: KernelSpec,
    nodes: &QuadratureNodes,
    keep_per_node: bool,
) -> Result<CrcEstimate> {
    if h <= 0.0 {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    for &r in &nodes.nodes {
        if !rset.contains(r) {
            return Err(Error::Config(format!(
                "quadrature node {r} lies outside the rank set"
            )));
        }
    }
    let windows = RankWindows::new(design, y, ranks)?;
    let fits: Vec<LocalFit> = nodes
        .nodes
        .par_iter()
        .map(|&r| windows.fit_at(r, h, kernel))
        .collect();

    let m = fits.len();
    let singular_nodes = fits.iter().filter(|f| f.singular).count();
    if singular_nodes == m {
        return Err(Error::Estimation(
            "instrument irrelevant on R: every quadrature node produced a \
             rank-deficient local fit"
                .into(),
        ));
    }

    // Reduce in node-value order so the average does not depend on how the
    // nodes were enumerated.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        fits[a]
            .r
            .partial_cmp(&fits[b].r)
            .unwrap()
            .then(std::cmp::Ordering::Equal)
    });
    let mut beta_r = DVector::zeros(design.d_w());
    for &i in &order {
        beta_r += &fits[i].beta;
    }
    beta_r /= m as f64;

    Ok(CrcEstimate {
        beta_r,
        rset: rset.clone(),
        bandwidth: h,
        nodes_used: m,
        singular_nodes,
        per_node: keep_per_node.then_some(fits),
    })
}

/// Average the local fits over the quadrature nodes: the sample version of
/// the trimmed mean coefficient vector. Rank-deficient nodes contribute
/// their minimum-norm fit and are counted in `singular_nodes`.
#[allow(non_snake_case)]
pub fn estimate_beta_R(
    design: &DesignMatrix,
    y: &DVector<f64>,
    ranks: &RankVector,
    rset: &RSet,
    h: f64,
    kernel: KernelSpec,
    nodes: &QuadratureNodes,
) -> Result<CrcEstimate> {
    estimate_impl(design, y, ranks, rset, h, kernel, nodes, false)
}

/// Same as [`estimate_beta_R`] but retains every per-node fit for
/// diagnostics output.
#[allow(non_snake_case)]
pub fn estimate_beta_R_detailed(
    design: &DesignMatrix,
    y: &DVector<f64>,
    ranks: &RankVector,
    rset: &RSet,
    h: f64,
    kernel: KernelSpec,
    nodes: &QuadratureNodes,
) -> Result<CrcEstimate> {
    estimate_impl(design, y, ranks, rset, h, kernel, nodes, true)
}

/// Mean coefficients among units observed at treatment level `x`.
#[derive(Debug, Clone)]
pub struct AttFit {
    pub x: f64,
    pub beta: DVector<f64>,
    /// Share of observations whose implied rank fell outside the rank set.
    pub dropped_fraction: f64,
    /// Bandwidth used for the kernel weights in treatment space.
    pub bandwidth_x: f64,
}

/// Rule-of-thumb bandwidth on the treatment variable:
/// `0.9 min(sd, iqr/1.34) n^(-1/5)`.
fn treatment_bandwidth(x: &DVector<f64>) -> Result<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let mut sorted: Vec<f64> = x.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| sorted[((p * (n as f64 - 1.0)).round() as usize).min(n - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread <= 0.0 {
        return Err(Error::Estimation(
            "treatment variable has no variation; cannot weight around x".into(),
        ));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Average effect among the treated at level `x`: the kernel-in-treatment
/// weighted average of `beta(F(x | Z_i))` over observations, dropping
/// observations whose implied rank leaves the rank set.
#[allow(clippy::too_many_arguments)]
pub fn att(
    design: &DesignMatrix,
    y: &DVector<f64>,
    ranks: &RankVector,
    cdf: &ConditionalCdf,
    data: &Dataset,
    x: f64,
    rset: &RSet,
    h: f64,
    kernel: KernelSpec,
) -> Result<AttFit> {
    let windows = RankWindows::new(design, y, ranks)?;
    let h_x = treatment_bandwidth(data.x_basic())?;
    let n = data.n();
    let mut dropped = 0usize;
    let mut weight_total = 0.0;
    let mut beta = DVector::zeros(design.d_w());
    for i in 0..n {
        let r = cdf.eval(x, &data.z_row(i))?;
        if !rset.contains(r) {
            dropped += 1;
            continue;
        }
        let w = kernel_eval(kernel, (data.x_basic()[i] - x) / h_x) / h_x;
        if w <= 0.0 {
            continue;
        }
        let fit = windows.fit_at(r, h, kernel);
        beta += w * fit.beta;
        weight_total += w;
    }
    if weight_total <= 0.0 {
        return Err(Error::Estimation(format!(
            "no observations receive weight at treatment level {x} \
             ({dropped} of {n} dropped by the rank set)"
        )));
    }
    beta /= weight_total;
    Ok(AttFit {
        x,
        beta,
        dropped_fraction: dropped as f64 / n as f64,
        bandwidth_x: h_x,
    })
}

/// A partial-effect summary of an estimated coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EffectQuery {
    /// Slope plus interaction terms evaluated at a covariate row.
    ApeAtZ1(Vec<f64>),
    /// Slope plus interaction terms at the covariate means.
    ApeMeanZ1,
    /// Effect of an exogenous move of the treatment between two levels.
    Ate { x_from: f64, x_to: f64 },
    /// Derivative of the fitted outcome in the treatment at level `x`.
    ApeAtX(f64),
}

/// Combine the averaged coefficients into the queried effect.
pub fn effect(
    est: &CrcEstimate,
    spec: &DesignSpec,
    query: &EffectQuery,
    z1_means: &[f64],
) -> Result<f64> {
    let beta = &est.beta_r;
    let term_col = |pos: usize| 2 + pos;
    let interaction_sum = |z1: &[f64]| -> Result<f64> {
        let mut total = 0.0;
        for (pos, term) in spec.terms.iter().enumerate() {
            if let DerivedTerm::Interaction(j) = term {
                let zj = z1.get(*j).ok_or_else(|| {
                    Error::Config(format!("interaction index {j} outside the covariate row"))
                })?;
                total += beta[term_col(pos)] * zj;
            }
        }
        Ok(total)
    };
    match query {
        EffectQuery::ApeAtZ1(z1) => Ok(beta[1] + interaction_sum(z1)?),
        EffectQuery::ApeMeanZ1 => Ok(beta[1] + interaction_sum(z1_means)?),
        EffectQuery::Ate { x_from, x_to } => {
            let dx = x_to - x_from;
            let mut total = beta[1] * dx + interaction_sum(z1_means)? * dx;
            for (pos, term) in spec.terms.iter().enumerate() {
                if let DerivedTerm::Power(k) = term {
                    let k = *k as i32;
                    total += beta[term_col(pos)] * (x_to.powi(k) - x_from.powi(k));
                }
            }
            Ok(total)
        }
        EffectQuery::ApeAtX(x) => {
            let mut total = beta[1];
            for (pos, term) in spec.terms.iter().enumerate() {
                if let DerivedTerm::Power(k) = term {
                    total += *k as f64 * beta[term_col(pos)] * x.powi(*k as i32 - 1);
                }
            }
            Ok(total)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_design;
    use crate::quadrature::{nodes_over, NodeScheme};

    fn dataset_from(x: Vec<f64>, y: Vec<f64>) -> Dataset {
        let n = x.len();
        let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        Dataset::new(y, x, vec![], vec![z]).unwrap()
    }

    fn even_ranks(n: usize) -> RankVector {
        RankVector::new((0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()).unwrap()
    }

    #[test]
    fn pinv_identity_and_diagonal() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let p = pinv(&eye, 1e-12).unwrap();
        assert!((p - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let p = pinv(&d, 1e-12).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn pinv_full_rank_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0)) +
            DMatrix::<f64>::identity(4, 4) * 3.0;
        let p = pinv(&m, 1e-12).unwrap();
        assert!(((&p * &m) - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn pinv_penrose_conditions_random_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let k = 2 + trial % 4;
            // PSD with occasional exact rank deficiency.
            let rank = 1 + trial % k;
            let b = DMatrix::from_fn(k, rank, |_, _| rng.gen_range(-1.0..1.0));
            let a = &b * b.transpose();
            let p = pinv(&a, 1e-12).unwrap();
            let scale_a = 1.0 + a.amax();
            let scale_p = 1.0 + p.amax();
            assert!(((&a * &p * &a) - &a).amax() < 1e-9 * scale_a, "trial {trial}");
            assert!(
                ((&p * &a * &p) - &p).amax() < 1e-9 * scale_a * scale_p,
                "trial {trial}"
            );
            let ap = &a * &p;
            let pa = &p * &a;
            assert!((&ap - ap.transpose()).amax() < 1e-9 * scale_a * scale_p, "trial {trial}");
            assert!((&pa - pa.transpose()).amax() < 1e-9 * scale_a * scale_p, "trial {trial}");
        }
    }

    #[test]
    fn exact_linear_data_recovered() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let data = dataset_from(x, y);
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let ranks = even_ranks(40);
        let fit = local_beta(&design, data.y(), &ranks, 0.5, 0.3, KernelSpec::Biweight).unwrap();
        assert!(!fit.singular);
        assert!((fit.beta[0] - 1.0).abs() < 1e-8, "{}", fit.beta);
        assert!((fit.beta[1] - 2.0).abs() < 1e-8, "{}", fit.beta);
    }

    #[test]
    fn constant_x_window_is_singular_but_finite() {
        let x = vec![3.0; 20];
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let data = dataset_from(x, y);
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let ranks = even_ranks(20);
        let fit = local_beta(&design, data.y(), &ranks, 0.5, 0.2, KernelSpec::Biweight).unwrap();
        assert!(fit.singular);
        assert!(fit.beta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn four_point_fit_matches_hand_solve() {
        // Hand-pick ranks so only the middle two observations get weight at
        // r = 0.5 with h = 0.2 under a uniform kernel.
        let x = vec![1.0, 2.0, 4.0, 8.0];
        let y = vec![0.5, 3.0, 5.0, 9.0];
        let data = dataset_from(x.clone(), y.clone());
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let ranks = RankVector::new(vec![0.1, 0.45, 0.55, 0.9]).unwrap();
        let fit = local_beta(&design, data.y(), &ranks, 0.5, 0.2, KernelSpec::Uniform).unwrap();
        assert_eq!(fit.effective_n, 2);
        // Equal weights on points (2,3) and (4,5): interpolating line.
        let slope = (5.0 - 3.0) / (4.0 - 2.0);
        let intercept = 3.0 - slope * 2.0;
        assert!((fit.beta[0] - intercept).abs() < 1e-9, "{}", fit.beta);
        assert!((fit.beta[1] - slope).abs() < 1e-9, "{}", fit.beta);
    }

    #[test]
    fn average_of_constant_fits_is_constant() {
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.61).cos() * 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| -0.5 + 1.5 * v).collect();
        let data = dataset_from(x, y);
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let ranks = even_ranks(60);
        let rset = RSet::interval(0.2, 0.8).unwrap();
        let nodes = nodes_over(&rset, 50, NodeScheme::Halton).unwrap();
        let est = estimate_beta_R(&design, data.y(), &ranks, &rset, 0.15, KernelSpec::Biweight, &nodes)
            .unwrap();
        assert_eq!(est.singular_nodes, 0);
        assert!((est.beta_r[0] + 0.5).abs() < 1e-8, "{}", est.beta_r);
        assert!((est.beta_r[1] - 1.5).abs() < 1e-8, "{}", est.beta_r);
    }

    #[test]
    fn two_node_average_is_arithmetic_mean() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = vec![1.0, 5.0, 2.0, 8.0, 3.0, 10.0];
        let data = dataset_from(x, y);
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let ranks = even_ranks(6);
        let rset = RSet::interval(0.2, 0.8).unwrap();
        let nodes = QuadratureNodes {
            nodes: vec![0.3, 0.7],
            scheme: NodeScheme::Grid,
        };
        let est = estimate_beta_R_detailed(
            &design, data.y(), &ranks, &rset, 0.25, KernelSpec::Biweight, &nodes,
        )
        .unwrap();
        let fits = est.per_node.as_ref().unwrap();
        let mean = (&fits[0].beta + &fits[1].beta) / 2.0;
        assert!((&est.beta_r - mean).amax() < 1e-15);
    }

    #[test]
    fn node_permutation_leaves_estimate_bit_identical() {
        let x: Vec<f64> = (0..80).map(|i| ((i * 37 % 80) as f64) / 10.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 1.2 + (i as f64).sin()).collect();
        let data = dataset_from(x, y);
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let ranks = even_ranks(80);
        let rset = RSet::interval(0.1, 0.9).unwrap();
        let mut nodes = nodes_over(&rset, 64, NodeScheme::Halton).unwrap();
        let a = estimate_beta_R(&design, data.y(), &ranks, &rset, 0.1, KernelSpec::Biweight, &nodes)
            .unwrap();
        nodes.nodes.reverse();
        let b = estimate_beta_R(&design, data.y(), &ranks, &rset, 0.1, KernelSpec::Biweight, &nodes)
            .unwrap();
        for (u, v) in a.beta_r.iter().zip(b.beta_r.iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn shifting_y_moves_only_the_intercept() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.83).sin()).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * v + (i as f64 * 0.3).cos()).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        let data = dataset_from(x.clone(), y);
        let data_shift = dataset_from(x, shifted);
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let ranks = even_ranks(50);
        let rset = RSet::interval(0.15, 0.85).unwrap();
        let nodes = nodes_over(&rset, 40, NodeScheme::Halton).unwrap();
        let a = estimate_beta_R(&design, data.y(), &ranks, &rset, 0.2, KernelSpec::Biweight, &nodes)
            .unwrap();
        let b = estimate_beta_R(
            &build_design(&data_shift, &DesignSpec::empty()).unwrap(),
            data_shift.y(),
            &ranks,
            &rset,
            0.2,
            KernelSpec::Biweight,
            &nodes,
        )
        .unwrap();
        assert!((b.beta_r[0] - a.beta_r[0] - 5.0).abs() < 1e-8);
        assert!((b.beta_r[1] - a.beta_r[1]).abs() < 1e-8);
    }

    #[test]
    fn att_with_degenerate_z_equals_local_fit() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 0.5 * v).collect();
        let n = x.len();
        let data = Dataset::new(y.clone(), x.clone(), vec![], vec![vec![1.0; n]]).unwrap();
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let cdf = ConditionalCdf::empirical(&data);
        let ranks = crate::first_stage::estimate_ranks(&data, &cdf).unwrap();
        let rset = RSet::full();
        let x_query = 5.0;
        let fit = att(
            &design, data.y(), &ranks, &cdf, &data, x_query, &rset, 0.2, KernelSpec::Biweight,
        )
        .unwrap();
        let r = cdf.eval(x_query, &data.z_row(0)).unwrap();
        let direct =
            local_beta(&design, data.y(), &ranks, r, 0.2, KernelSpec::Biweight).unwrap();
        assert!((&fit.beta - &direct.beta).amax() < 1e-12);
        assert_eq!(fit.dropped_fraction, 0.0);
    }

    #[test]
    fn effect_queries() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let data = Dataset::new(
            vec![0.0; 20],
            x,
            vec![(0..20).map(|i| (i % 3) as f64).collect()],
            vec![(0..20).map(|i| (i % 2) as f64).collect()],
        )
        .unwrap();
        let spec = DesignSpec::new(vec![DerivedTerm::Interaction(0)]).unwrap();
        let design = build_design(&data, &spec).unwrap();
        let mut est = CrcEstimate {
            beta_r: DVector::from_vec(vec![0.0, 0.5, 0.2, 0.0]),
            rset: RSet::full(),
            bandwidth: 0.1,
            nodes_used: 1,
            singular_nodes: 0,
            per_node: None,
        };
        let _ = &design;
        // slope 0.5, interaction 0.2, E[Z1] = 2 -> APE 0.9.
        let v = effect(&est, &spec, &EffectQuery::ApeMeanZ1, &[2.0]).unwrap();
        assert!((v - 0.9).abs() < 1e-15);
        let v = effect(&est, &spec, &EffectQuery::ApeAtZ1(vec![1.0]), &[2.0]).unwrap();
        assert!((v - 0.7).abs() < 1e-15);
        // Interaction-only spec: ATE = APE * (x_to - x_from).
        let v = effect(
            &est,
            &spec,
            &EffectQuery::Ate { x_from: 1.0, x_to: 3.0 },
            &[2.0],
        )
        .unwrap();
        assert!((v - 1.8).abs() < 1e-14);

        // Quadratic spec: derivative formula, and degenerate zero power.
        let spec2 = DesignSpec::new(vec![DerivedTerm::Power(2)]).unwrap();
        est.beta_r = DVector::from_vec(vec![0.0, 1.0, 0.5]);
        let v = effect(&est, &spec2, &EffectQuery::ApeAtX(3.0), &[]).unwrap();
        assert!((v - 4.0).abs() < 1e-15);
        est.beta_r = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        for xq in [0.0, 1.0, -2.5] {
            let v = effect(&est, &spec2, &EffectQuery::ApeAtX(xq), &[]).unwrap();
            assert!((v - 1.0).abs() < 1e-15);
        }
    }
}
