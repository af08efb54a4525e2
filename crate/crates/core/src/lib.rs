//! Experimental designs optimized through Gaussian latent treatments.
//!
//! Treatments are generated as D_i = g(T_i) with T ~ N(0, Σ). Covariances of
//! the resulting treatment indicators are analytic elementwise functions of Σ,
//! so covariate balance can be optimized directly over correlation matrices.

pub mod covmap;
pub mod elliptope;
pub mod error;
pub mod estimators;
pub mod hermite;
pub mod inference;
pub mod normal;
pub mod optimizer;
pub mod quadrature;
pub mod rng;
pub mod simbench;

pub use error::{Error, Result};
