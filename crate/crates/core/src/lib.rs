//! Tree-mixture multivariate Pareto models for gridded spatial threshold
//! exceedances.
//!
//! The crate covers the full batch workflow:
//!
//! 1. site-wise generalized Pareto tails with pooled-neighborhood fitting
//!    and transforms to/from the unit-Pareto scale ([`margins`]);
//! 2. Hüsler–Reiss dependence building blocks: variogram matrices,
//!    intensities, exponent functions and the χ-measure ([`hr`]);
//! 3. lattice graphs, spanning trees and matrix-tree determinants
//!    ([`graphs`]);
//! 4. censored pairwise likelihood estimation of per-edge variogram
//!    parameters and stochastic gradient ascent for the spanning-tree
//!    prior weights ([`fit`]);
//! 5. the assembled tree-mixture model, its χ-measures and the
//!    bias-correction scale ([`mixture`]);
//! 6. exact simulation from tree models and mixtures, plus a synthetic
//!    gridded dataset generator ([`simulate`]);
//! 7. batch orchestration: ingestion, seasons and windows, clustering,
//!    per-cluster fits, risk aggregation and report emission
//!    ([`pipeline`]).

// Published rational-approximation constants keep their full printed
// precision; NaN-rejecting comparisons are written as negations on purpose.
#![allow(clippy::excessive_precision)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod fit;
pub mod graphs;
pub mod hr;
pub mod margins;
pub mod mixture;
pub mod optim;
pub mod pipeline;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
