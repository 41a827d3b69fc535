//! Simulation and verification tools for one-dimensional Kac-like kinetic
//! equations `∂_t μ + μ = Q⁺(μ, μ)`, where `Q⁺` sends a law to that of
//! `L X₁ + R X₂`.
//!
//! The crate covers the spectral analysis of the collision kernel `(L, R)`,
//! centered stable laws, the fixed point of the smoothing transform and the
//! resulting steady states, exact Monte Carlo sampling of the solution,
//! distance estimators, a deterministic characteristic-function solver and a
//! sufficient test for finiteness of the initial Wasserstein distance.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod finiteness;
pub mod fixed_point;
pub mod fourier;
pub mod kernel;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod stable;
pub mod wild;

pub use error::{KacError, Result};
pub use experiment::{emit_report, run_experiment, DecayReport, ExperimentConfig};
pub use finiteness::{check_finiteness, required_order, Remainder, TailSpec, Verdict};
pub use fixed_point::{moments_recursive, MixtureLaw, MomentTable};
pub use fourier::CfGrid;
pub use kernel::{
    find_alpha, find_p0, rate_constant, validate_h0, Atom, CollisionKernel, DecayRate, Regime, SpectralProfile,
    ValidationReport,
};
pub use metrics::{DistanceEstimate, EmpiricalMeasure, Estimator};
pub use stable::{StableParams, TailCoefficients};
pub use wild::{InitialDatum, WeightArray};

pub use num_complex::Complex64;
