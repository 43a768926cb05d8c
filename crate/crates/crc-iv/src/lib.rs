//! Instrumental-variables estimation for linear models with correlated
//! random coefficients.
//!
//! The outcome model is `Y = W'B` with `W = [1, X, derived terms, Z1]` and a
//! random coefficient vector `B` that may depend on the regressors. A first
//! stage estimates each observation's conditional rank
//! `R_i = F_{X|Z}(X_i | Z_i)`; conditioning on the rank restores exogeneity,
//! so a kernel-weighted linear regression localized at rank `r` estimates
//! `E[B | R = r]`, and averaging those local estimates over a trimmed rank
//! set gives the trimmed mean coefficient vector. Standard errors come from
//! a nonparametric bootstrap that reruns the whole pipeline per draw.
//!
//! Modules:
//! - [`dataset`]: CSV ingestion and design-matrix construction.
//! - [`first_stage`]: quantile-regression and empirical-CDF rank estimators.
//! - [`quadrature`]: kernels, trimmed rank sets, Halton node generation.
//! - [`estimator`]: local fits, the trimmed average, treatment-on-treated,
//!   and partial-effect queries.
//! - [`baselines`]: OLS and two-stage least squares with robust covariance.
//! - [`inference`]: bootstrap covariance and confidence intervals.
//! - [`simulation`]: data-generating process and Monte Carlo study runner.
//! - [`pipeline`]: one-call configuration of the full estimation chain.
//! - [`cli`]: command-line configuration, validation, and report output.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod first_stage;
pub mod inference;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
