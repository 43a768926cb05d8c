//! One-call wiring of the full estimation chain.
//!
//! A [`PipelineConfig`] fixes everything between a raw dataset and the
//! trimmed-average estimate: the design expansion, the first-stage CDF
//! estimator, the kernel, the rank set, the bandwidth, and the quadrature
//! rule. The bootstrap reruns this chain on every resample, so it lives in
//! one place.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_design, Dataset, DesignMatrix, DesignSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimate_beta_R, estimate_beta_R_detailed, CrcEstimate};
use crate::first_stage::{estimate_ranks, fit_quantile_process, ConditionalCdf, RankVector};
use crate::quadrature::{nodes_over, KernelSpec, NodeScheme, RSet};

/// Which conditional-CDF estimator produces the ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FirstStageConfig {
    /// Linear quantile regressions on an equally spaced grid, rearranged
    /// into a CDF.
    Qr { levels: usize },
    /// Cell-wise empirical CDF; requires discrete exogenous variables.
    Ecdf,
}

impl FirstStageConfig {
    pub fn parse(s: &str, levels: usize) -> Result<Self> {
        match s {
            "qr" => Ok(FirstStageConfig::Qr { levels }),
            "ecdf" => Ok(FirstStageConfig::Ecdf),
            other => Err(Error::Config(format!(
                "unknown first stage '{other}' (expected qr|ecdf)"
            ))),
        }
    }
}

/// Full configuration of the estimation chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub design: DesignSpec,
    pub first_stage: FirstStageConfig,
    pub kernel: KernelSpec,
    pub rset: RSet,
    pub bandwidth: f64,
    pub nodes: usize,
    pub scheme: NodeScheme,
}

/// Everything the chain produced, kept for diagnostics and reuse.
pub struct PipelineFit {
    pub estimate: CrcEstimate,
    pub ranks: RankVector,
    pub cdf: ConditionalCdf,
    pub design: DesignMatrix,
}

/// Fit the configured first stage and return the conditional CDF.
pub fn first_stage_cdf(data: &Dataset, cfg: &FirstStageConfig) -> Result<ConditionalCdf> {
    match cfg {
        FirstStageConfig::Qr { levels } => {
            let process = fit_quantile_process(data, *levels)?;
            Ok(ConditionalCdf::rearranged(process))
        }
        FirstStageConfig::Ecdf => Ok(ConditionalCdf::empirical(data)),
    }
}

fn run_impl(data: &Dataset, cfg: &PipelineConfig, detailed: bool) -> Result<PipelineFit> {
    let design = build_design(data, &cfg.design)?;
    let cdf = first_stage_cdf(data, &cfg.first_stage)?;
    let ranks = estimate_ranks(data, &cdf)?;
    let nodes = nodes_over(&cfg.rset, cfg.nodes, cfg.scheme)?;
    let estimate = if detailed {
        estimate_beta_R_detailed(
            &design, data.y(), &ranks, &cfg.rset, cfg.bandwidth, cfg.kernel, &nodes,
        )?
    } else {
        estimate_beta_R(
            &design, data.y(), &ranks, &cfg.rset, cfg.bandwidth, cfg.kernel, &nodes,
        )?
    };
    Ok(PipelineFit { estimate, ranks, cdf, design })
}

/// Run first stage, ranks, nodes, and the trimmed average.
pub fn run_pipeline(data: &Dataset, cfg: &PipelineConfig) -> Result<PipelineFit> {
    run_impl(data, cfg, false)
}

/// Same, retaining per-node fits.
pub fn run_pipeline_detailed(data: &Dataset, cfg: &PipelineConfig) -> Result<PipelineFit> {
    run_impl(data, cfg, true)
}

/// The coefficient vector alone; the shape the bootstrap engine wants.
pub fn pipeline_beta(data: &Dataset, cfg: &PipelineConfig) -> Result<DVector<f64>> {
    Ok(run_pipeline(data, cfg)?.estimate.beta_r)
}
