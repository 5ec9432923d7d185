pub mod besov;
pub mod dimension;
pub mod embedding;
pub mod error;
pub mod field;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod mollified;
pub mod nonlocal;
pub mod operator;
pub mod quadrature;
pub mod report;
pub mod sampling;
pub mod scalar;
pub mod special;

pub use error::{KfpError, Result};
pub use field::{AaBox, GaussianMixture, GaussianTerm, GridField, RegionSet, ScalarField};
pub use operator::{KernelParams, OperatorSpec};
pub use report::{EmbeddingReport, VerificationReport};
pub use sampling::SamplerState;
pub use scalar::Real;

pub type Spec = OperatorSpec<f64>;
pub type Params = KernelParams<f64>;
pub type SpecF32 = OperatorSpec<f32>;
pub type ParamsF32 = KernelParams<f32>;
