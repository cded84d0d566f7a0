//! Gaussian copula models with Gaussian-mixture marginals, fitted to
//! incomplete data by expectation conditional maximization.

pub mod cli;
pub mod copula;
pub mod dataset;
pub mod ecm;
pub mod error;
pub mod marginals;
pub mod numkernel;
pub mod simstudy;

pub use copula::{CopulaModel, CorrelationMatrix};
pub use dataset::IncompleteDataset;
pub use ecm::{run_ecm, EcmConfig, EcmTrace};
pub use error::{Error, Result};
pub use marginals::{MarginalSet, MixtureMarginal};
