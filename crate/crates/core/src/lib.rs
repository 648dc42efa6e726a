//! Joint state and parameter estimation: sparse-regression models of the
//! dynamics, delay-coordinate lifting of partial observations and an
//! extended Kalman filter over the augmented state.

pub mod embedding;
pub mod error;
pub mod filter;
pub mod io;
pub mod pipeline;
pub mod sindy;
pub mod systems;

pub use error::{Error, Result};
