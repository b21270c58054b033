//! Levenberg-Marquardt ascent with Fisher-information curvature.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::linalg::solve_sym;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step changes the objective by less than
    /// `tolerance` per data sample.
    pub tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-6, initial_damping: 1e-3 }
    }
}

/// Objective, gradient and Fisher information at a parameter vector.
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub fisher: DMatrix<f64>,
}

pub trait LmProblem {
    fn dim(&self) -> usize;
    /// Number of data samples the objective sums over.
    fn samples(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Option<f64>;
    fn evaluate(&self, theta: &[f64]) -> Option<Evaluation>;
    /// Maps a trial vector back into the feasible set.
    fn project(&self, _theta: &mut [f64]) {}
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub theta: Vec<f64>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximizes `problem` from `theta0`.
///
/// Each iteration solves `(F + lambda diag F) delta = g`. Steps that lower
/// the objective are rejected and the damping grows tenfold; accepted steps
/// shrink it tenfold.
pub fn maximize<P: LmProblem>(problem: &P, theta0: &[f64], cfg: &LmConfig) -> Result<LmOutcome> {
    let n = problem.dim();
    if theta0.len() != n {
        return Err(invalid!("initial vector has {} entries, expected {n}", theta0.len()));
    }
    let mut theta = theta0.to_vec();
    problem.project(&mut theta);
    let mut ev = problem
        .evaluate(&theta)
        .ok_or_else(|| crate::Error::Numerical(alloc::string::String::from("objective undefined at the initial point")))?;
    let mut trace = alloc::vec![ev.value];
    let mut lambda = cfg.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    let tol = cfg.tolerance * problem.samples().max(1) as f64;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut accepted = None;
        while lambda < 1e12 {
            let mut a = ev.fisher.clone();
            for i in 0..n {
                a[(i, i)] += lambda * ev.fisher[(i, i)].max(1e-12);
            }
            let Some(delta) = solve_sym(&a, &ev.gradient) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            problem.project(&mut trial);
            match problem.value(&trial) {
                Some(v) if v.is_finite() && v >= ev.value => {
                    accepted = Some((trial, v));
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        let Some((trial, v)) = accepted else {
            // no ascent direction left at any damping
            converged = true;
            break;
        };
        let change = v - ev.value;
        theta = trial;
        ev = match problem.evaluate(&theta) {
            Some(e) => e,
            None => return Err(crate::Error::Numerical(alloc::string::String::from("objective undefined after an accepted step"))),
        };
        trace.push(ev.value);
        if change <= tol {
            converged = true;
            break;
        }
    }
    Ok(LmOutcome { theta, trace, iterations, converged })
}
