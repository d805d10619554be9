//! Outage probability of an MRC-based fluid antenna system (FAS) under
//! spatially correlated Rician fading.
//!
//! A receiver switches a single fluid antenna among `M` equispaced ports
//! inside an aperture of `W` wavelengths, activates the `K` ports with the
//! highest instantaneous SNR, and combines them with maximum ratio combining.
//! This crate evaluates the outage probability of the post-combining SNR by
//! four routes that cross-validate each other:
//!
//! * [`outage::op_analytical`] — exact integral of the conditional
//!   selection/outage probabilities over the pivot SNR and the port-1 SNR;
//! * [`outage::op_lower_bound`] — closed-form lower bound (hypoexponential
//!   approximation of the conditional port laws);
//! * [`outage::op_asymptotic`] — high-SNR power law exposing the diversity
//!   order `M`;
//! * [`montecarlo`] — a seeded, reproducible channel simulator.
//!
//! The numeric core is generic over the scalar type through [`scalar::Scalar`]
//! (`f32` or `f64`); the accuracy contracts quoted in the documentation hold
//! for `f64`, which is what the type aliases at the crate root fix.

pub mod dist;
pub mod laplace;
pub mod model;
pub mod montecarlo;
pub mod outage;
pub mod quad;
pub mod scalar;
pub mod special;

pub use scalar::Scalar;

/// Error type shared by every module of the crate.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A scenario description violates a structural invariant.
    #[error("config error: {0}")]
    Config(String),
    /// A series or quadrature failed to converge; the message carries the
    /// last tail or refinement estimate.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Double-precision scenario description.
pub type SystemConfig64 = model::SystemConfig<f64>;
/// Double-precision per-port coefficients.
pub type PortParams64 = model::PortParams<f64>;
/// Double-precision truncation/quadrature policy.
pub type TruncationPolicy64 = outage::TruncationPolicy<f64>;
/// Double-precision outage estimate.
pub type OutageEstimate64 = outage::OutageEstimate<f64>;
