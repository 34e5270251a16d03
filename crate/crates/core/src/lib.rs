//! Variance components for high-dimensional genetic data under a
//! misspecified linear mixed model: REML estimation of the residual variance
//! and heritability, misspecification-robust variance estimates, confidence
//! intervals and a Monte Carlo harness for evaluating them.
//!
//! Numerical routines are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common double-precision instances.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ci;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod genosim;
pub mod grm;
pub mod linalg;
pub mod mcstudy;
pub mod reml;
pub mod report;
pub mod rng;
pub mod roots;
pub mod scalar;
pub mod varest;

pub use ci::{bootstrap_ci, normal_ci, normal_quantile, ratio_interval, truncated_ci, Interval, IntervalKind, Parameter};
pub use dataset::{load_dataset, quality_control, Dataset, QcReport};
pub use error::{Error, Result};
pub use genosim::{draw_allele_freqs, draw_genotypes, simulate_phenotype, true_heritability, GenotypeMatrix, SimConfig};
pub use grm::{relatedness, spectral, standardize, trace_bundle, DesignSource, SpectralGrm, StreamedDesign, TraceBundle};
pub use mcstudy::{run_replication, run_study, summarize, McSummary, ReplicationResult, StudyOptions};
pub use reml::{fit, fit_with, heritability_from_ratio, sigma_eps, solve_gamma, RemlFit, SolverOptions};
pub use scalar::Real;
pub use varest::{abc_statistics, var_gamma, var_h2, var_sigma_eps, AbcStats, ExponentMode, VarianceEstimates};

pub type SpectralGrm64 = SpectralGrm<f64>;
pub type SpectralGrm32 = SpectralGrm<f32>;
pub type RemlFit64 = RemlFit<f64>;
pub type RemlFit32 = RemlFit<f32>;
pub type AbcStats64 = AbcStats<f64>;
pub type AbcStats32 = AbcStats<f32>;
pub type TraceBundle64 = TraceBundle<f64>;
pub type Interval64 = Interval<f64>;
