//! Linear quantile regression by direct pinball-loss minimization.
//!
//! The fit runs in two phases. An iteratively reweighted least-squares pass
//! on a smoothed loss gets close to the minimizer, then a vertex-exchange
//! phase moves between interpolating basic solutions (each one fits `p`
//! observations exactly) with exact piecewise-linear line searches until the
//! subgradient certificate holds. The certificate is checked explicitly:
//! for a basic solution with basis rows `B`, the reduced costs
//! `q = A_B^{-T} g` must lie in `[tau - 1, tau]`, which is necessary and
//! sufficient for optimality at a nondegenerate vertex.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-major design storage; the hot loops all walk rows.
#[derive(Debug, Clone)]
pub struct DesignRows {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl DesignRows {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DesignRows { data, rows, cols }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn basis_matrix(&self, basis: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.cols, self.cols, |r, c| self.row(basis[r])[c])
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Check loss `rho_tau(u) = u (tau - 1{u < 0})` summed over residuals.
pub fn pinball_loss(design: &DesignRows, x: &[f64], tau: f64, coef: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..design.nrows() {
        let u = x[i] - dot(design.row(i), coef);
        total += u * (tau - if u < 0.0 { 1.0 } else { 0.0 });
    }
    total
}

/// A certified quantile-regression fit.
#[derive(Debug, Clone)]
pub struct PinballFit {
    pub coef: Vec<f64>,
    pub objective: f64,
    /// Largest violation of the reduced-cost box `[tau - 1, tau]` at the
    /// returned vertex; zero (to roundoff) on success.
    pub gap: f64,
    pub pivots: usize,
    /// Rows interpolated exactly by the fit; reusable as a warm start.
    pub basis: Vec<usize>,
}

const MAX_PIVOTS_BASE: usize = 200;
const GAP_TOL: f64 = 1e-8;

/// Fit the linear tau-quantile of `x` on the rows of `design`.
///
/// `warm_basis` skips the smoothing phase and starts the vertex exchange
/// from a previous solution's basis, which is cheap when `tau` moves a
/// small step along a grid.
pub fn fit(
    design: &DesignRows,
    x: &[f64],
    tau: f64,
    warm_basis: Option<&[usize]>,
) -> Result<PinballFit> {
    let n = design.nrows();
    let p = design.ncols();
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::Config(format!("quantile level must be in (0,1), got {tau}")));
    }
    if n < p {
        return Err(Error::Estimation(format!(
            "quantile regression needs at least {p} rows, got {n}"
        )));
    }

    if let Some(basis) = warm_basis {
        if basis.len() == p {
            if let Some(fit) = descend(design, x, tau, basis.to_vec())? {
                return Ok(fit);
            }
        }
    }

    let coef = irls(design, x, tau)?;
    let basis = select_basis(design, x, &coef)?;
    match descend(design, x, tau, basis)? {
        Some(fit) => Ok(fit),
        None => Err(Error::Numerical(
            "quantile regression vertex exchange failed from cold start".into(),
        )),
    }
}

/// Smoothed warm start: reweighted least squares on
/// `sum w_i (x_i - a_i'b)^2` with `w_i = (tau or 1-tau) / max(|u_i|, eps)`,
/// tightening `eps` geometrically.
fn irls(design: &DesignRows, x: &[f64], tau: f64) -> Result<Vec<f64>> {
    let n = design.nrows();
    let p = design.ncols();

    let solve_weighted = |w: Option<&[f64]>| -> Option<DVector<f64>> {
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for i in 0..n {
            let wi = w.map_or(1.0, |w| w[i]);
            let row = design.row(i);
            for a in 0..p {
                rhs[a] += wi * row[a] * x[i];
                for b in a..p {
                    gram[(a, b)] += wi * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        gram.cholesky().map(|ch| ch.solve(&rhs))
    };

    let mut coef = match solve_weighted(None) {
        Some(c) => c,
        None => {
            return Err(Error::Estimation(
                "rank-deficient design in quantile regression".into(),
            ))
        }
    };

    let scale = {
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        (var.sqrt() + mean.abs()).max(1e-12)
    };

    let mut weights = vec![0.0; n];
    let mut eps = 1e-2 * scale;
    for _ in 0..6 {
        for _ in 0..6 {
            for i in 0..n {
                let u = x[i] - dot(design.row(i), coef.as_slice());
                let side = if u >= 0.0 { tau } else { 1.0 - tau };
                weights[i] = side / u.abs().max(eps);
            }
            let next = match solve_weighted(Some(&weights)) {
                Some(c) => c,
                None => break,
            };
            let change = (&next - &coef).amax();
            coef = next;
            if change < 1e-12 * (1.0 + coef.amax()) {
                break;
            }
        }
        eps *= 1e-2;
        if eps < 1e-13 * scale {
            break;
        }
    }
    Ok(coef.as_slice().to_vec())
}

/// Pick `p` linearly independent rows, preferring those the warm start fits
/// best, by modified Gram-Schmidt with a relative independence threshold.
fn select_basis(design: &DesignRows, x: &[f64], coef: &[f64]) -> Result<Vec<usize>> {
    let n = design.nrows();
    let p = design.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    let mut resid: Vec<f64> = (0..n)
        .map(|i| (x[i] - dot(design.row(i), coef)).abs())
        .collect();
    order.sort_by(|&a, &b| resid[a].partial_cmp(&resid[b]).unwrap());
    resid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
    for &i in &order {
        if basis.len() == p {
            break;
        }
        let mut v: Vec<f64> = design.row(i).to_vec();
        let norm0: f64 = dot(&v, &v).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for q in &ortho {
            let proj = dot(&v, q);
            for (vk, qk) in v.iter_mut().zip(q) {
                *vk -= proj * qk;
            }
        }
        let norm: f64 = dot(&v, &v).sqrt();
        if norm > 1e-10 * norm0 {
            for vk in &mut v {
                *vk /= norm;
            }
            ortho.push(v);
            basis.push(i);
        }
    }
    if basis.len() < p {
        return Err(Error::Estimation(
            "rank-deficient design in quantile regression".into(),
        ));
    }
    Ok(basis)
}

struct Vertex {
    basis: Vec<usize>,
    lu: nalgebra::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    coef: DVector<f64>,
}

fn make_vertex(design: &DesignRows, x: &[f64], basis: Vec<usize>) -> Option<Vertex> {
    let a_b = design.basis_matrix(&basis);
    let lu = a_b.clone().full_piv_lu();
    let lu_t = a_b.transpose().full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    let xb = DVector::from_fn(basis.len(), |r, _| x[basis[r]]);
    let coef = lu.solve(&xb)?;
    Some(Vertex { basis, lu, lu_t, coef })
}

/// Vertex-exchange descent from an initial basis. Returns `Ok(None)` when
/// the initial basis is unusable (caller falls back to a cold start).
fn descend(
    design: &DesignRows,
    x: &[f64],
    tau: f64,
    basis: Vec<usize>,
) -> Result<Option<PinballFit>> {
    let n = design.nrows();
    let p = design.ncols();
    let max_pivots = MAX_PIVOTS_BASE + 30 * p;

    let mut vertex = match make_vertex(design, x, basis) {
        Some(v) => v,
        None => return Ok(None),
    };

    let mut in_basis = vec![false; n];
    let mut resid = vec![0.0; n];
    let mut pivots = 0usize;

    loop {
        for f in in_basis.iter_mut() {
            *f = false;
        }
        for &i in &vertex.basis {
            in_basis[i] = true;
        }
        // Residuals, with a relative snap-to-zero so degenerate rows are
        // treated as active rather than as noise.
        let mut zero_rows: Vec<usize> = Vec::new();
        let mut g = vec![0.0; p];
        for i in 0..n {
            if in_basis[i] {
                resid[i] = 0.0;
                continue;
            }
            let row = design.row(i);
            let fit = dot(row, vertex.coef.as_slice());
            let mut u = x[i] - fit;
            if u.abs() <= 1e-11 * (1.0 + x[i].abs() + fit.abs()) {
                u = 0.0;
                zero_rows.push(i);
            }
            resid[i] = u;
            if u != 0.0 {
                let c = tau - if u < 0.0 { 1.0 } else { 0.0 };
                for (gk, ak) in g.iter_mut().zip(row) {
                    *gk -= c * ak;
                }
            }
        }

        // Reduced costs q = A_B^{-T} g; optimal iff q in [tau-1, tau]
        // (degenerate zero rows only add nonnegative terms on top).
        let q = match vertex.lu_t.solve(&DVector::from_vec(g.clone())) {
            Some(q) => q,
            None => return Ok(None),
        };

        let mut worst = 0.0f64;
        let mut pick: Option<(usize, f64)> = None; // (basis slot, direction sign)
        for k in 0..p {
            let d_plus = q[k] + (1.0 - tau);
            let d_minus = -q[k] + tau;
            if d_plus < -GAP_TOL || d_minus < -GAP_TOL {
                // Degenerate active rows can only raise the directional
                // derivative; recheck the candidate against them.
                let (d_plus, d_minus) = if zero_rows.is_empty() {
                    (d_plus, d_minus)
                } else {
                    let mut e = DVector::zeros(p);
                    e[k] = 1.0;
                    match vertex.lu.solve(&e) {
                        Some(dir) => {
                            let mut extra = 0.0;
                            let mut extra_neg = 0.0;
                            for &i in &zero_rows {
                                let s = dot(design.row(i), dir.as_slice());
                                extra += if s > 0.0 { (1.0 - tau) * s } else { -tau * s };
                                extra_neg += if s < 0.0 { -(1.0 - tau) * s } else { tau * s };
                            }
                            (d_plus + extra, d_minus + extra_neg)
                        }
                        None => (d_plus, d_minus),
                    }
                };
                if d_plus < worst {
                    worst = d_plus;
                    pick = Some((k, 1.0));
                }
                if d_minus < worst {
                    worst = d_minus;
                    pick = Some((k, -1.0));
                }
            }
        }

        let (slot, sign) = match pick {
            Some(ks) => ks,
            None => {
                // Certified optimal at this vertex.
                let coef = vertex.coef.as_slice().to_vec();
                let objective = pinball_loss(design, x, tau, &coef);
                let gap = (0..p)
                    .map(|k| (q[k] - tau).max((tau - 1.0) - q[k]).max(0.0))
                    .fold(0.0, f64::max);
                return Ok(Some(PinballFit {
                    coef,
                    objective,
                    gap,
                    pivots,
                    basis: vertex.basis.clone(),
                }));
            }
        };

        if pivots >= max_pivots {
            let coef = vertex.coef.as_slice().to_vec();
            let objective = pinball_loss(design, x, tau, &coef);
            return Err(Error::Numerical(format!(
                "quantile regression did not converge within {max_pivots} pivots \
                 (tau={tau}, objective={objective:.6e}, certificate gap={:.3e}, \
                 last iterate={coef:?})",
                -worst
            )));
        }

        // Move along the edge that drops basis row `slot`.
        let mut e = DVector::zeros(p);
        e[slot] = sign;
        let dir = match vertex.lu.solve(&e) {
            Some(d) => d,
            None => return Ok(None),
        };

        // Directional derivative at t = 0+, with active rows counted on the
        // side they move toward.
        let mut deriv = 0.0;
        let mut steps: Vec<(f64, usize, f64)> = Vec::new(); // (t, row, |s|)
        for i in 0..n {
            let s = if in_basis[i] {
                if i == vertex.basis[slot] {
                    sign
                } else {
                    0.0
                }
            } else {
                dot(design.row(i), dir.as_slice())
            };
            if s == 0.0 {
                continue;
            }
            let u = resid[i];
            if u == 0.0 {
                deriv += if s > 0.0 { (1.0 - tau) * s } else { -tau * s };
            } else {
                let c = tau - if u < 0.0 { 1.0 } else { 0.0 };
                deriv -= c * s;
                let t = u / s;
                if t > 0.0 {
                    steps.push((t, i, s.abs()));
                }
            }
        }

        if deriv >= -GAP_TOL {
            // The candidate was not a real descent direction once active
            // rows are accounted for; treat the vertex as optimal.
            let coef = vertex.coef.as_slice().to_vec();
            let objective = pinball_loss(design, x, tau, &coef);
            return Ok(Some(PinballFit {
                coef,
                objective,
                gap: (-worst).max(0.0),
                pivots,
                basis: vertex.basis.clone(),
            }));
        }

        steps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut entering = None;
        for &(_, i, jump) in &steps {
            deriv += jump;
            if deriv >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let entering = match entering {
            Some(i) => i,
            None => {
                return Err(Error::Numerical(
                    "pinball objective unbounded along an edge; design is degenerate".into(),
                ))
            }
        };

        let mut new_basis = vertex.basis.clone();
        new_basis[slot] = entering;
        vertex = match make_vertex(design, x, new_basis) {
            Some(v) => v,
            None => {
                // Entering row is dependent with the remaining basis; take
                // the next breakpoint that restores invertibility.
                let mut replaced = None;
                for &(_, i, _) in steps
                    .iter()
                    .skip_while(|&&(_, i, _)| i != entering)
                    .skip(1)
                {
                    let mut nb = vertex.basis.clone();
                    nb[slot] = i;
                    if let Some(v) = make_vertex(design, x, nb) {
                        replaced = Some(v);
                        break;
                    }
                }
                match replaced {
                    Some(v) => v,
                    None => return Ok(None),
                }
            }
        };
        pivots += 1;
    }
}
