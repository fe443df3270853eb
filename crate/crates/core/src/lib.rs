// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Conditional-state simulation and estimator-based feedback for a
//! nanomechanical beam coupled through an rf-SQUID to a monitored
//! transmission-line resonator.
//!
//! Frequencies and rates are angular (rad/s). Quadrature variances are in
//! units of ħ, so the vacuum value is ½.

pub mod config;
pub mod error;
pub mod estimator;
pub mod full_sme;
pub mod gaussian;
pub mod metrics;
pub mod operators;
pub mod reduced;
pub mod rng;
pub mod runner;
pub mod sme;
pub mod sparse;
pub mod system;

#[cfg(test)]
mod proptests;

pub use error::{Error, Result};
