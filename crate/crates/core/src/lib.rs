pub mod diffusion;
pub mod error;
pub mod factor;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod svd;
pub mod synth;

pub use error::{DiceError, Result};
pub use factor::{fit_loading, project, reconstruct, FactorLoading};
pub use linalg::DenseMatrix;
pub use rng::{sample_dirichlet, sample_multivariate_t, sample_standard_normal, RngStream};
pub use svd::{svd_topk, SvdResult};
