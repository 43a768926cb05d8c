//! Bootstrap covariance and confidence intervals.
//!
//! The asymptotic variance of the trimmed-average estimator mixes the
//! local-regression sampling error with the effect of estimating the ranks,
//! and a plug-in estimate would need derivatives of the local coefficient
//! path. The nonparametric bootstrap sidesteps that: each draw resamples
//! rows with replacement and reruns the entire pipeline, first stage
//! included. Intervals are centered at the full-sample estimate and use
//! normal quantiles scaled by the bootstrap standard deviation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Inverse standard-normal CDF (Wichura's PPND16 rational approximation;
/// relative error below 1e-15 on (0, 1), far inside the 1e-9 the interval
/// formula needs).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile needs p in (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870_1e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_9e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_8e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Bootstrap covariance, intervals, and the failed-draw census.
#[derive(Debug, Clone)]
pub struct BootstrapReport {
    pub draws_requested: usize,
    pub draws_used: usize,
    /// Draws whose estimator failed, with the reason; recorded, excluded.
    pub failures: Vec<(usize, String)>,
    pub sigma: DMatrix<f64>,
    /// Per-component `(lower, upper)` at level `alpha`, centered at the
    /// full-sample estimate.
    pub ci: Vec<(f64, f64)>,
    pub alpha: f64,
    pub seed: u64,
    pub center: DVector<f64>,
}

impl BootstrapReport {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.sigma.nrows())
            .map(|j| self.sigma[(j, j)].max(0.0).sqrt())
            .collect()
    }
}

/// Resample `data` rows with replacement `draws` times, rerun `estimator`
/// on each draw, and assemble the covariance of the draw estimates.
///
/// `center` is the full-sample estimate the intervals are centered at; the
/// draw mean enters only through the covariance. Each draw uses its own RNG
/// stream keyed by `(seed, draw index)` and the reduction runs in draw
/// order, so the report is identical at any worker count. Draws whose
/// estimator errors are excluded and recorded; more than 10% failures
/// aborts with the census.
pub fn bootstrap<F>(
    data: &Dataset,
    center: &DVector<f64>,
    estimator: F,
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapReport>
where
    F: Fn(&Dataset) -> Result<DVector<f64>> + Sync,
{
    if draws < 2 {
        return Err(Error::Config(format!("need at least 2 bootstrap draws, got {draws}")));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    let n = data.n();
    let d = center.len();

    let results: Vec<std::result::Result<DVector<f64>, String>> = (0..draws)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(seed, s as u64);
            let idx: Vec<usize> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..n)).collect();
            let resampled = data.select_rows(&idx);
            match estimator(&resampled) {
                Ok(est) if est.len() == d => Ok(est),
                Ok(est) => Err(format!(
                    "draw estimate has dimension {}, expected {d}",
                    est.len()
                )),
                Err(e) => Err(e.to_string()),
            }
        })
        .collect();

    let mut estimates: Vec<DVector<f64>> = Vec::with_capacity(draws);
    let mut failures: Vec<(usize, String)> = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        match r {
            Ok(est) => estimates.push(est),
            Err(msg) => failures.push((s, msg)),
        }
    }
    if failures.len() * 10 > draws {
        return Err(Error::Estimation(format!(
            "{} of {draws} bootstrap draws failed; first failures: {:?}",
            failures.len(),
            &failures[..failures.len().min(5)]
        )));
    }
    let used = estimates.len();
    if used < 2 {
        return Err(Error::Estimation("fewer than 2 usable bootstrap draws".into()));
    }

    let mut mean = DVector::zeros(d);
    for est in &estimates {
        mean += est;
    }
    mean /= used as f64;

    let mut sigma = DMatrix::zeros(d, d);
    for est in &estimates {
        let dev = est - &mean;
        sigma += &dev * dev.transpose();
    }
    sigma /= (used - 1) as f64;
    // Outer products are symmetric in exact arithmetic; enforce it.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }

    let z = normal_quantile(1.0 - alpha / 2.0);
    let ci: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let half = z * sigma[(j, j)].max(0.0).sqrt();
            (center[j] - half, center[j] + half)
        })
        .collect();

    Ok(BootstrapReport {
        draws_requested: draws,
        draws_used: used,
        failures,
        sigma,
        ci,
        alpha,
        seed,
        center: center.clone(),
    })
}
