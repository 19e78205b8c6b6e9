//! Distribution-regression decompositions of changes in an outcome
//! distribution into contributions from blocks of covariates and from the
//! conditional structure, plus a quantile-regression counterpart.

pub mod analysis;
pub mod counterfactual;
pub mod dataset;
pub mod dgp;
pub mod distreg;
pub mod error;
pub mod functionals;
pub mod glm;
pub mod inference;
pub mod melly;
pub mod prep;
mod par;

pub use error::{Error, Result};
