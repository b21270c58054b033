//! Dense multipath (DMC) estimation.
//!
//! The delay domain is fitted from the frequency covariance of the SMC
//! residual and the angular domains from its spatial marginals, each with
//! the same Fisher-scoring Levenberg-Marquardt engine.

pub mod angular;
pub mod delay;
pub mod lm;

pub use angular::{
    bartlett_init_angular, bartlett_init_from_covariance, fit_dmc_angular, AngularFitConfig, AngularFitReport,
    BartlettInitConfig,
};
pub use crate::mimo::Side;
pub use delay::{
    detect_processes, estimate_delay_processes, fit_dmc_delay, fit_dmc_delay_periodogram, init_dmc_delay,
    power_capture_ratio, DelayInit, DetectConfig, DmcFitReport, ProcessSegment,
};
pub use lm::{LmConfig, LmOutcome};
