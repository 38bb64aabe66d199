//! Birth–death discretisations of one-dimensional Langevin diffusions, exact
//! asymptotic variances and Peskun orderings, and simulated-tempering ladders
//! tuned through their temperature diffusion limit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod birth_death;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod ladder_opt;
pub mod normal;
pub mod quadrature;
pub mod stats;
pub mod target;
pub mod tempering;
pub mod validation;

pub use birth_death::{
    build_chain, exact_asymptotic_variance, gap_exact, gap_lower_bound, peskun_dominates,
    BirthDeathChain, SigmaFunction, VarianceReport,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentKind, RunOptions};
pub use ladder_opt::{optimal_ladder, OptimalRule};
pub use target::{Domain, TargetDensity, TemperedFamily};
pub use tempering::{build_ladder, run_st_chain, EllRule, Ladder, STTrace};
