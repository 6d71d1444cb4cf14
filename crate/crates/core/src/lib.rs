//! Small-signal modal analysis and surgical eigenstructure assignment for
//! linear power-system models.
//!
//! The pipeline is: build or load an [`LtiSystem`](model::LtiSystem), decompose
//! it with [`modal::modal_decomposition`], then synthesize a static state
//! feedback with [`assign`] that zeroes selected participation factors or
//! hides a mode from an output while every eigenvalue stays where it was.
//! [`verify`] re-checks the claimed properties from raw matrices.

pub mod assign;
pub mod cli;
pub mod error;
pub mod modal;
pub mod model;
pub mod numerics;
pub mod verify;

pub use error::{Error, Result};
