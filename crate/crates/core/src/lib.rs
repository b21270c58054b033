//! Dual-polarized MIMO channel synthesis, specular/dense multipath parameter
//! estimation and channel characterization.
//!
//! The crate is `no_std` (with `alloc`): every routine is a pure function of
//! its inputs, and all randomness flows from explicit seeds. File formats,
//! the command line and campaign orchestration live in the `chanest` crate.
//!
//! Layout of the crate follows the processing chain:
//!
//! - [`array`]: antenna geometries and dual-polarized response matrices.
//! - [`synth`]: SMC/DMC forward models and channel tensor synthesis.
//! - [`smc`]: successive-cancellation specular path estimation and residuals.
//! - [`dmc`]: multi-process dense multipath estimation (delay and angular).
//! - [`stats`]: SISO-style link statistics (PL, DS, ED, KF, AS, XPR, ...).
//! - [`mimo`]: Bartlett spectra, normalization, singular values, capacity.

#![no_std]
// Index-heavy numerical kernels read better with explicit loops.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]
// Builds that link std (tests, dev-dependency features) resolve float
// methods inherently and leave the `Float` imports unused.
#![allow(unused_imports)]

extern crate alloc;

pub mod array;
pub mod dmc;
pub mod fft;
pub mod grid;
pub mod linalg;
pub mod math;
pub mod mimo;
pub mod rng;
pub mod smc;
pub mod stats;
pub mod synth;
pub mod vmf;

mod error;

pub use error::{Error, Result};
pub use grid::{ChannelTensor, FrequencyGrid};
pub use num_complex::Complex64;

/// Speed of light used throughout (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.998e8;
