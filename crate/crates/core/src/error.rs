// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised by the engine. Report-only operations never return these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("invalid slot: {0}")]
    InvalidSlot(String),
    #[error("regime error: {0}")]
    Regime(String),
    #[error("detuning-sign error: {0}")]
    DetuningSign(String),
    #[error("near-singular gain: |chi| = {chi:.3e} below {limit:.3e}")]
    NearSingularGain { chi: f64, limit: f64 },
    #[error("out of validity: {0}")]
    OutOfValidity(String),
    #[error("integration blowup at step {step}")]
    Blowup { step: usize },
    #[error("no convergence within {horizon:.3e} s: {detail}")]
    NonConvergence { horizon: f64, detail: String },
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("negative input: {0}")]
    NegativeInput(String),
    #[error("dt mismatch: plant {plant:.6e} s vs filter {filter:.6e} s")]
    DtMismatch { plant: f64, filter: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
