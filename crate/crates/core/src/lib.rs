//! Numerical Riemannian geometry for optimal transport regularity on surfaces.
//!
//! The crate computes geodesics, Jacobi fields, cut and focal loci, the
//! Ma–Trudinger–Wang tensor and its extended variant, and checks the convexity
//! statements that tie them together.

pub mod cli;
pub mod convexity;
pub mod cutlocus;
pub mod error;
pub mod geodesic;
pub mod jacobi;
pub mod manifold;
pub mod mtw;

pub use error::{GeoError, Result};
