//! Monte Carlo simulators for fractional Brownian motion and the rough
//! Bergomi model, and the path batches they produce.
//!
//! Both models are simulated exactly in law on the fine grid by a Cholesky
//! factorization of the joint Gaussian covariance.

mod batch;
mod fbm;
mod gaussian;
mod quadrature;
mod rbergomi;
pub mod rng;

pub use batch::{read_path_dump, PathBatch, PathDump};
pub use fbm::{fbm_covariance, simulate_fbm, FbmConfig, FbmModel};
pub use gaussian::GaussianSampler;
pub use rbergomi::{
    simulate_rbergomi, stacked_covariance, volterra_cov, volterra_increment_cov, RBergomiConfig,
    RBergomiModel, VolterraScaling,
};
