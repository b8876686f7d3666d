//! Desk-scale entropic optimal transport between two sampleable distributions,
//! solved as a Schrodinger bridge with neural vector fields.
//!
//! The pipeline has two phases. Pretraining regresses a bidirectional vector
//! field onto Brownian-bridge drifts of an initial coupling (bridge matching).
//! Online finetuning then alternates, within every gradient step, between
//! generating endpoint couplings with the current model's forward and backward
//! SDEs and taking one regression step on the bridges of those couplings,
//! which drives the coupling toward the entropic optimum while preserving the
//! endpoint marginals by construction.
//!
//! Alongside the neural path, [`analytic`] carries closed-form Gaussian ground
//! truth (entropic cross-covariance, the covariance recursion of the exact
//! projection iteration, a projected toy flow) used to verify the solver end
//! to end, and [`data_metrics`] provides the 2D toy datasets and evaluation
//! metrics.
//!
//! Everything is deterministic given a seed: randomness flows through the
//! counter-based [`numerics::RngState`], there is no global RNG, and training
//! single-threaded is bit-reproducible.
//!
//! The numeric kernels are generic over the scalar type via [`Real`]; the
//! aliases at the crate root fix `f64`, which is what the binary and the
//! verification suites use.

pub mod analytic;
pub mod bridge;
pub mod data_metrics;
pub mod net;
pub mod numerics;
pub mod sampler;
pub mod train;

use std::fmt::{Debug, Display};

/// Scalar abstraction for all numeric kernels.
///
/// `f32` and `f64` implement it; nothing else is expected to. The bound set
/// is what the kernels actually use: IEEE arithmetic, conversions from
/// literal constants, and in-place accumulation.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + num_traits::Zero
    + num_traits::One
    + ndarray::ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal. Panics only if the
    /// target type cannot represent any finite approximation, which does not
    /// happen for f32/f64.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal representable in scalar type")
    }

    /// Widening conversion used when serializing and reporting.
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Double-precision batch of samples, the working type of the binary.
pub type Batch64 = numerics::Batch<f64>;
/// Double-precision paired batch.
pub type CouplingBatch64 = numerics::CouplingBatch<f64>;
/// Double-precision network parameters.
pub type VectorFieldParams64 = net::VectorFieldParams<f64>;
/// Double-precision training state.
pub type TrainState64 = net::TrainState<f64>;
/// Double-precision training configuration.
pub type TrainConfig64 = train::TrainConfig<f64>;
