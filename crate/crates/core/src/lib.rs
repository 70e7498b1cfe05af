//! Ensemble data assimilation on the Lorenz-96 model.
//!
//! Three filters are provided: the sequential stochastic EnKF, the
//! four-dimensional stochastic EnKF, and QPCA-EnDCF, a deterministic
//! filter that restricts observation-space corrections to the leading
//! eigenmodes of the whitened forecast–observation residual covariance.
//! [`harness`] runs seeded twin experiments and writes calibration
//! diagnostics; [`theory`] holds Monte-Carlo checks of the supporting
//! covariance and perturbation identities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod filters;
pub mod harness;
pub mod linalg;
pub mod observation;
pub mod parallel;
pub mod seeds;
pub mod spectral;
pub mod theory;
pub mod twin;

pub use error::{Error, Result};
pub use filters::{FilterConfig, Method};
pub use parallel::Execution;
