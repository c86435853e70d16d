//! Behavioral simulation and digital calibration of control-bounded ADCs.
//!
//! The pipeline is: build a leapfrog frontend ([`frontend`]), simulate it
//! under digital control ([`simulator`]), reconstruct the input with an FIR
//! filter bank ([`estimator`]), learn that bank from the control sequences
//! alone ([`calibration`]) and measure the result ([`evaluation`]).

pub mod calibration;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod experiment;
pub mod frontend;
pub mod linalg;
pub mod simulator;

pub use error::{Error, Result};
