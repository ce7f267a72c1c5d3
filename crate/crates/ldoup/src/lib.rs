//! Simulation and maximum-likelihood calibration of multivariate Lévy-driven
//! Ornstein-Uhlenbeck processes (LDOUPs) whose stationary law (WVAG-OU) or
//! background driving Lévy process (OU-WVAG) is a weak variance alpha-gamma
//! process.
//!
//! The crate provides closed-form and quadrature characteristic exponents,
//! Fourier inversion of characteristic functions to density grids, exact and
//! Euler-scheme samplers, mixture and generic log-likelihoods, parameter
//! recovery and fitting, and the validation statistics used to check all of
//! the above.

pub mod charfn;
pub mod estimation;
pub mod fourier;
pub mod likelihood;
pub mod moments;
pub mod params;
pub mod sampling;
pub mod stats;

pub use params::{LdoupModel, ModelKind, ObservationSet, WvagParams};
