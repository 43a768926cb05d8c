//! Kernel functions, rank-set trimming, and low-discrepancy node generation.
//!
//! The trimmed-average estimator integrates local coefficient estimates over
//! a user-chosen set of conditional ranks. This module provides the kernel
//! family used for the local weights, the rank-set type with its trimming
//! margin, radical-inverse Halton sequences, and the measure-preserving map
//! that turns unit-interval draws into nodes inside the rank set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compactly supported kernel families on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    /// `(15/16)(1 - u^2)^2`
    Biweight,
    /// `(35/32)(1 - u^2)^3`
    Triweight,
    /// `(3/4)(1 - u^2)`
    Epanechnikov,
    /// `1/2` on the support; not twice differentiable at the boundary.
    Uniform,
}

impl KernelSpec {
    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Biweight => "biweight",
            KernelSpec::Triweight => "triweight",
            KernelSpec::Epanechnikov => "epanechnikov",
            KernelSpec::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "biweight" => Ok(KernelSpec::Biweight),
            "triweight" => Ok(KernelSpec::Triweight),
            "epanechnikov" => Ok(KernelSpec::Epanechnikov),
            "uniform" => Ok(KernelSpec::Uniform),
            other => Err(Error::Config(format!(
                "unknown kernel '{other}' (expected biweight|triweight|epanechnikov|uniform)"
            ))),
        }
    }
}

/// Evaluate the kernel at `u`. Zero outside `[-1, 1]`; each family
/// integrates to one over its support and is symmetric around zero.
pub fn kernel_eval(spec: KernelSpec, u: f64) -> f64 {
    if !(-1.0..=1.0).contains(&u) {
        return 0.0;
    }
    let t = 1.0 - u * u;
    match spec {
        KernelSpec::Biweight => 15.0 / 16.0 * t * t,
        KernelSpec::Triweight => 35.0 / 32.0 * t * t * t,
        KernelSpec::Epanechnikov => 0.75 * t,
        KernelSpec::Uniform => 0.5,
    }
}

/// Bandwidth-scaled kernel weights `w_i = K((ranks_i - r)/h) / h`.
///
/// Observations farther than `h` from `r` get exactly zero weight.
pub fn kernel_weights(spec: KernelSpec, ranks: &[f64], r: f64, h: f64) -> Vec<f64> {
    assert!(h > 0.0, "bandwidth must be positive");
    ranks
        .iter()
        .map(|&ri| kernel_eval(spec, (ri - r) / h) / h)
        .collect()
}

/// A finite union of disjoint closed intervals inside `[delta, 1 - delta]`,
/// the set of conditional ranks the estimator averages over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSet {
    intervals: Vec<(f64, f64)>,
    delta: f64,
}

impl RSet {
    /// Build a rank set from closed intervals and a trimming margin.
    ///
    /// The intervals are sorted, must be pairwise disjoint, lie inside
    /// `[delta, 1 - delta]`, and have positive total length.
    pub fn new(mut intervals: Vec<(f64, f64)>, delta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::Config(format!(
                "trimming margin must lie in [0, 0.5), got {delta}"
            )));
        }
        if intervals.is_empty() {
            return Err(Error::Config("rank set needs at least one interval".into()));
        }
        intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for &(a, b) in &intervals {
            if !(a.is_finite() && b.is_finite()) || a > b {
                return Err(Error::Config(format!("invalid interval [{a}, {b}]")));
            }
            if a < delta || b > 1.0 - delta {
                return Err(Error::Config(format!(
                    "interval [{a}, {b}] leaves the trimmed range [{delta}, {}]",
                    1.0 - delta
                )));
            }
        }
        for w in intervals.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(Error::Config(format!(
                    "intervals [{}, {}] and [{}, {}] overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        let set = RSet { intervals, delta };
        if set.measure() <= 0.0 {
            return Err(Error::Config("rank set has zero measure".into()));
        }
        Ok(set)
    }

    /// A single interval `[lo, hi]` with margin taken from its endpoints.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let delta = lo.min(1.0 - hi).max(0.0);
        Self::new(vec![(lo, hi)], delta)
    }

    /// The untrimmed full range `[0, 1]`.
    pub fn full() -> Self {
        RSet {
            intervals: vec![(0.0, 1.0)],
            delta: 0.0,
        }
    }

    /// Parse a spec like `"0.1:0.4,0.6:0.9"`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut intervals = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            let (lo, hi) = part.split_once(':').ok_or_else(|| {
                Error::Config(format!("rank-set piece '{part}' is not of the form lo:hi"))
            })?;
            let lo: f64 = lo
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad rank-set bound '{lo}'")))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad rank-set bound '{hi}'")))?;
            intervals.push((lo, hi));
        }
        let delta = intervals
            .iter()
            .map(|&(a, b)| a.min(1.0 - b))
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        Self::new(intervals, delta)
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Lebesgue measure of the set.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|&(a, b)| b - a).sum()
    }

    pub fn contains(&self, r: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= r && r <= b)
    }

    /// True when the set reaches either endpoint of `[0, 1]`.
    pub fn touches_boundary(&self) -> bool {
        let first = self.intervals.first().unwrap().0;
        let last = self.intervals.last().unwrap().1;
        first <= 0.0 || last >= 1.0
    }

    /// Map `u` in `(0, 1)` onto the set through the inverse CDF of the
    /// uniform distribution on the set. Boundaries between intervals
    /// resolve by right continuity: mass exactly at the end of one
    /// interval lands on the start of the next.
    pub fn map_unit(&self, u: f64) -> f64 {
        let total = self.measure();
        let target = u * total;
        let mut cum = 0.0;
        for &(a, b) in &self.intervals {
            let len = b - a;
            if target < cum + len {
                return a + (target - cum);
            }
            cum += len;
        }
        self.intervals.last().unwrap().1
    }

    pub fn describe(&self) -> String {
        self.intervals
            .iter()
            .map(|&(a, b)| format!("{a}:{b}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// How integration nodes are placed inside the rank set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeScheme {
    /// Base-2 radical-inverse sequence mapped through the set's inverse CDF.
    Halton,
    /// Midpoints of an equal-measure partition of the set.
    Grid,
}

impl NodeScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "halton" => Ok(NodeScheme::Halton),
            "grid" => Ok(NodeScheme::Grid),
            other => Err(Error::Config(format!(
                "unknown node scheme '{other}' (expected halton|grid)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeScheme::Halton => "halton",
            NodeScheme::Grid => "grid",
        }
    }
}

/// Integration nodes over a rank set, averaged with equal weights.
#[derive(Debug, Clone)]
pub struct QuadratureNodes {
    pub nodes: Vec<f64>,
    pub scheme: NodeScheme,
}

/// Radical inverse of `index` in a prime `base`: the digits of `index`
/// in that base, mirrored around the radix point.
pub fn halton(index: u64, base: u64) -> f64 {
    assert!(index >= 1, "halton index starts at 1");
    assert!(base >= 2, "halton base must be at least 2");
    let mut n = index;
    let mut f = 1.0;
    let mut value = 0.0;
    let b = base as f64;
    while n > 0 {
        f /= b;
        value += f * (n % base) as f64;
        n /= base;
    }
    value
}

/// Place `count` nodes over the rank set.
///
/// The halton scheme maps the base-2 sequence through the set's inverse
/// CDF, so equal-weight averaging over nodes converges to the normalized
/// integral over the set. The grid scheme uses equal-measure midpoints.
pub fn nodes_over(rset: &RSet, count: usize, scheme: NodeScheme) -> Result<QuadratureNodes> {
    if count == 0 {
        return Err(Error::Config("node count must be at least 1".into()));
    }
    if rset.measure() <= 0.0 {
        return Err(Error::Config("rank set has zero measure".into()));
    }
    let nodes = match scheme {
        NodeScheme::Halton => (1..=count as u64)
            .map(|k| rset.map_unit(halton(k, 2)))
            .collect(),
        NodeScheme::Grid => (0..count)
            .map(|k| rset.map_unit((k as f64 + 0.5) / count as f64))
            .collect(),
    };
    Ok(QuadratureNodes { nodes, scheme })
}
