//! Overlap dynamics of one-pass SGD for two-layer teacher-student networks
//! with Gaussian data and sigma(x) = erf(x / sqrt(2)) units.
//!
//! The crate tracks the macroscopic overlaps (Q, M, P) that determine the
//! population risk, evaluates the closed-form Gaussian kernels entering the
//! risk and the drift, integrates the deterministic scaling-limit ODEs in
//! each learning regime, and simulates the finite-d weight-space process.
//!
//! `no_std` + `alloc`; IO, CLI and file formats live in the companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod init;
pub mod kernels;
pub mod ode;
pub mod overlap;
pub mod risk;
pub mod rng;
pub mod scaling;
pub mod sgd;

pub use error::{Error, Result};
pub use overlap::{overlap_from_weights, OverlapState, WeightMatrices};
pub use risk::{population_risk, population_risk_with, RiskConvention, RiskValue};
pub use scaling::{classify_regime, time_step, RegimeLabel, ScalingConfig};
