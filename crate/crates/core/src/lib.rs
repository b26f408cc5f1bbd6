pub mod dataset;
pub mod classifier;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod ot;
pub mod replay;

pub use error::{Error, Result};

/// Scalar used by the training stack. Numerics and OT are generic over
/// `num_traits::Float`; everything above them is fixed to this.
pub type Real = f64;
pub type DenseMatrix = numerics::Matrix<Real>;
pub type SinkhornConfig = ot::SinkhornOptions<Real>;
pub type Plan = ot::TransportPlan<Real>;
