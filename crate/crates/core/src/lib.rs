//! Learning gradient Young measures of non-convex variational problems as
//! pushforwards of a standard Gaussian through the latent gradient of a
//! residual network potential.
//!
//! The core is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`, which is what training and analysis use.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod network;
pub mod optimizer;
pub mod pipeline;
pub mod problems;
pub mod sampling;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

pub type Jet = autodiff::Jet2<f64>;
pub type Params = autodiff::ParameterVector<f64>;
pub type Network = network::PotentialNetwork<f64>;
pub type Network32 = network::PotentialNetwork<f32>;
