//! Model-based biclustering of units × indicators data.
//!
//! Each mixture component has mean `μ_k` and covariance `B_k B_k' + D_k`, where
//! `B_k` is a binary row-stochastic matrix assigning every indicator to one of
//! `L_k` column clusters and `D_k` is diagonal. Components are row clusters;
//! the columns of `B_k` are the column clusters within component `k`. Fitting
//! uses a two-cycle AECM algorithm and models are compared by AIC/BIC over a
//! grid of `(variant, K, L)`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aecm;
pub mod data;
pub mod density;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod selection;
pub mod synth;

pub use aecm::{fit, fit_with_starts, DUpdateRule, FitConfig, FitResult, InitMethod};
pub use data::DataMatrix;
pub use density::{assemble_covariance, log_density, log_likelihood};
pub use error::{Error, Result};
pub use model::{
    column_cluster_assignment, parameter_count, ComponentParams, Dimensions, Membership, MixtureParams,
    ModelVariant, Responsibilities, VARIANCE_FLOOR,
};
pub use selection::{aic, bic, grid_search, Criterion, GridSpec, LMode, SelectionRecord, SelectionTable};
