//! OLS and two-stage least squares comparison estimators.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, DesignMatrix};
use crate::error::{Error, Result};

/// A linear fit with heteroskedasticity-robust covariance.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    pub robust_cov: DMatrix<f64>,
    pub n: usize,
    /// First-stage F statistic on the excluded instruments (TSLS only).
    pub first_stage_f: Option<f64>,
}

/// Small-sample scaling of the robust covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RobustKind {
    /// Plain sandwich, no correction.
    #[default]
    Hc0,
    /// Scaled by `n / (n - k)`.
    Hc1,
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn sandwich(
    bread: &DMatrix<f64>,
    regressors: &DMatrix<f64>,
    resid: &DVector<f64>,
    kind: RobustKind,
) -> DMatrix<f64> {
    let n = regressors.nrows();
    let k = regressors.ncols();
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let u2 = resid[i] * resid[i];
        for a in 0..k {
            let ra = regressors[(i, a)];
            for b in a..k {
                meat[(a, b)] += u2 * ra * regressors[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let mut cov = bread * meat * bread.transpose();
    if kind == RobustKind::Hc1 && n > k {
        cov *= n as f64 / (n - k) as f64;
    }
    symmetrize(cov)
}

/// Ordinary least squares of `y` on the design columns.
pub fn ols(design: &DesignMatrix, y: &DVector<f64>) -> Result<LinearFit> {
    ols_with(design, y, RobustKind::Hc0)
}

pub fn ols_with(design: &DesignMatrix, y: &DVector<f64>, kind: RobustKind) -> Result<LinearFit> {
    let w = &design.w;
    let n = w.nrows();
    if y.len() != n {
        return Err(Error::Config("y length does not match the design".into()));
    }
    let gram = w.transpose() * w;
    let bread = gram
        .cholesky()
        .ok_or_else(|| Error::Estimation("rank-deficient design in OLS".into()))?
        .inverse();
    let coefficients = &bread * (w.transpose() * y);
    let resid = y - w * &coefficients;
    let robust_cov = sandwich(&bread, w, &resid, kind);
    Ok(LinearFit {
        coefficients,
        robust_cov,
        n,
        first_stage_f: None,
    })
}

/// First-stage F statistic for the excluded instruments: compares the
/// regression of the endogenous column on all instruments against one on
/// the included exogenous columns alone.
fn first_stage_f(x: &DVector<f64>, full: &DMatrix<f64>, n_excluded: usize) -> Option<f64> {
    let n = full.nrows();
    let k_full = full.ncols();
    let k_restricted = k_full - n_excluded;
    let rss = |m: &DMatrix<f64>| -> Option<f64> {
        let chol = (m.transpose() * m).cholesky()?;
        let coef = chol.solve(&(m.transpose() * x));
        let resid = x - m * coef;
        Some(resid.norm_squared())
    };
    let rss_full = rss(full)?;
    let restricted = full.columns(0, k_restricted).into_owned();
    let rss_restricted = rss(&restricted)?;
    if n <= k_full || rss_full <= 0.0 {
        return None;
    }
    Some(((rss_restricted - rss_full) / n_excluded as f64) / (rss_full / (n - k_full) as f64))
}

/// Two-stage least squares with the instrument set `[1, Z2, Z1]`.
///
/// The design is projected on the instruments, coefficients solve
/// `(What' W) b = What' y`, and the covariance is the usual sandwich with
/// residuals taken at the original regressors.
pub fn tsls(design: &DesignMatrix, y: &DVector<f64>, data: &Dataset) -> Result<LinearFit> {
    tsls_with(design, y, data, RobustKind::Hc0)
}

pub fn tsls_with(
    design: &DesignMatrix,
    y: &DVector<f64>,
    data: &Dataset,
    kind: RobustKind,
) -> Result<LinearFit> {
    let w = &design.w;
    let n = w.nrows();
    if y.len() != n || data.n() != n {
        return Err(Error::Config("dimension mismatch in TSLS inputs".into()));
    }
    let d1 = data.d1();
    let d2 = data.d2();
    let k_inst = 1 + d2 + d1;
    if k_inst < design.d_w() {
        return Err(Error::Config(format!(
            "under-identified: {} instrument columns for {} design columns",
            k_inst,
            design.d_w()
        )));
    }
    let inst = DMatrix::from_fn(n, k_inst, |i, j| {
        if j == 0 {
            1.0
        } else if j <= d2 {
            data.z2()[(i, j - 1)]
        } else {
            data.z1()[(i, j - 1 - d2)]
        }
    });

    let ztz = inst.transpose() * &inst;
    let ztz_chol = ztz
        .cholesky()
        .ok_or_else(|| Error::Estimation("collinear instrument set in TSLS".into()))?;
    // What = P_Z W, via Z (Z'Z)^{-1} (Z'W).
    let ztw = inst.transpose() * w;
    let w_hat = &inst * ztz_chol.solve(&ztw);

    let cross = w_hat.transpose() * w;
    let bread = cross
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Estimation("singular projected design in TSLS".into()))?;
    let coefficients = &bread * (w_hat.transpose() * y);
    let resid = y - w * &coefficients;
    let robust_cov = sandwich(&bread, &w_hat, &resid, kind);

    let f = first_stage_f(data.x_basic(), &reordered_for_f(&inst, d1, d2), d2);
    Ok(LinearFit {
        coefficients,
        robust_cov,
        n,
        first_stage_f: f,
    })
}

// The F test restricts the excluded instruments, so order columns as
// [1, Z1, Z2] with Z2 last.
fn reordered_for_f(inst: &DMatrix<f64>, d1: usize, d2: usize) -> DMatrix<f64> {
    let n = inst.nrows();
    DMatrix::from_fn(n, 1 + d1 + d2, |i, j| {
        if j == 0 {
            1.0
        } else if j <= d1 {
            inst[(i, d2 + j)]
        } else {
            inst[(i, j - d1)]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_design, DesignSpec};

    fn exact_line_data(n: usize) -> (Dataset, DesignMatrix) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 5.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let data = Dataset::new(y, x, vec![], vec![z]).unwrap();
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        (data, design)
    }

    #[test]
    fn ols_exact_fit() {
        let (data, design) = exact_line_data(30);
        let fit = ols(&design, data.y()).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ols_orthogonal_regressor_gets_zero() {
        // y loads only on the intercept; a centered regressor orthogonal to
        // y picks up a zero coefficient.
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y = vec![3.0; n];
        let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let data = Dataset::new(y, x, vec![], vec![z]).unwrap();
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let fit = ols(&design, data.y()).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
        assert!(fit.coefficients[1].abs() < 1e-12);
    }

    #[test]
    fn ols_matches_hand_elimination_on_five_points() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![1.1, 1.9, 3.2, 3.8, 5.1];
        let z = vec![0.0, 1.0, 0.0, 1.0, 0.0];
        let data = Dataset::new(y.clone(), x.clone(), vec![], vec![z]).unwrap();
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let fit = ols(&design, data.y()).unwrap();

        // Independent 2x2 normal-equations solve by Cramer's rule.
        let n = 5.0;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        let b0 = (sy * sxx - sx * sxy) / det;
        let b1 = (n * sxy - sx * sy) / det;
        assert!((fit.coefficients[0] - b0).abs() < 1e-12);
        assert!((fit.coefficients[1] - b1).abs() < 1e-12);
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let (data, design) = exact_line_data(25);
        let mut y = data.y().clone();
        for i in 0..y.len() {
            y[i] += ((i * 13 % 7) as f64 - 3.0) / 5.0;
        }
        let fit = ols(&design, &y).unwrap();
        let resid = &y - &design.w * &fit.coefficients;
        let scale = design.w.amax() * resid.amax().max(1.0);
        let moments = design.w.transpose() * resid;
        assert!(moments.amax() < 1e-8 * y.len() as f64 * scale, "{moments}");
    }

    #[test]
    fn robust_cov_symmetric_psd() {
        let (data, design) = exact_line_data(30);
        let mut y = data.y().clone();
        for i in 0..y.len() {
            y[i] += ((i * 7 % 5) as f64) / 10.0;
        }
        let fit = ols(&design, &y).unwrap();
        let cov = &fit.robust_cov;
        assert!((cov - cov.transpose()).amax() < 1e-9);
        let eig = cov.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9));
    }

    #[test]
    fn tsls_with_self_instrument_is_ols() {
        // x exogenous and used as its own instrument: z2 = x.
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.71).sin() + 2.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 0.5 + 1.5 * v + ((i % 3) as f64 - 1.0) * 0.1).collect();
        let data = Dataset::new(y, x.clone(), vec![], vec![x]).unwrap();
        let design = build_design(&data, &DesignSpec::empty()).unwrap();
        let o = ols(&design, data.y()).unwrap();
        let t = tsls(&design, data.y(), &data).unwrap();
        assert!((&o.coefficients - &t.coefficients).amax() < 1e-10);
        assert!((&o.robust_cov - &t.robust_cov).amax() < 1e-10);
    }

    #[test]
    fn tsls_under_identified() {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let z1: Vec<f64> = (0..n).map(|i| (i % 3) as f64).collect();
        let z2: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let data = Dataset::new(vec![0.0; n], x, vec![z1], vec![z2]).unwrap();
        // Adding a power term makes d_w = 4 > 3 instrument columns.
        let spec = DesignSpec::new(vec![crate::dataset::DerivedTerm::Power(2)]).unwrap();
        let design = build_design(&data, &spec).unwrap();
        let err = tsls(&design, data.y(), &data).unwrap_err();
        assert!(err.to_string().contains("under-identified"), "{err}");
    }

    #[test]
    fn robust_cov_shrinks_at_root_n_rate() {
        use rand::{Rng, SeedableRng};
        let mut ratio_sum = 0.0;
        let reps = 200;
        for rep in 0..reps {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + rep);
            let make = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = x.iter().map(|v| 1.0 + v + rng.gen_range(-0.5..0.5)).collect();
                let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
                let data = Dataset::new(y, x, vec![], vec![z]).unwrap();
                let design = build_design(&data, &DesignSpec::empty()).unwrap();
                let fit = ols(&design, data.y()).unwrap();
                fit.robust_cov[(1, 1)]
            };
            let v_small = make(200, &mut rng);
            let v_large = make(800, &mut rng);
            ratio_sum += v_small / v_large;
        }
        let ratio = ratio_sum / reps as f64;
        assert!((3.2..4.8).contains(&ratio), "variance ratio {ratio}");
    }
}
