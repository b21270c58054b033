//! Campaign pipeline around `chanest-core`: configuration, tensor
//! containers, synthesis, estimation and characterization reports.

pub mod characterize;
pub mod config;
pub mod container;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod scenario;

pub use error::{AppError, AppResult};
