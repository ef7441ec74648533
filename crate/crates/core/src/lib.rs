//! Energy-stable block networks for gradient-flow PDEs.
//!
//! The crate covers the full Allen-Cahn pipeline: periodic spectral fields,
//! a Dormand-Prince reference solver, dataset generation and storage, a small
//! reverse-mode autodiff engine, the energy-decay network itself, training,
//! and energy diagnostics.

pub mod error;
pub mod field;

pub use error::{Error, Result};
pub mod autodiff;
pub mod dataset;
pub mod model;
pub mod diagnostics;
pub mod solver;
pub mod training;
