//! EM-NPL(q) estimation of dynamic discrete choice models with finite-mixture
//! unobserved heterogeneity.

pub mod clock;
pub mod dgp;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod logit;
pub mod maps;
pub mod model;

pub use error::{Error, Result};
