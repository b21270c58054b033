//! Multi-process delay-domain DMC estimation: onset detection on the delay
//! PSD, per-process initialization and ML refinement of the frequency
//! covariance.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::lm::{maximize, Evaluation, LmConfig, LmProblem};
use crate::error::invalid;
use crate::grid::FrequencyGrid;
use crate::linalg::CMat;
use crate::math::{logistic, median};
use crate::smc::periodogram_from_covariance;
use crate::synth::{psd_on_grid, DmcDelayProcess, NormalizedProcess, ONSET_WIDTH_BINS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Moving-average window (bins).
    pub window: usize,
    /// Minimum smoothed rise (dB) that marks a new process.
    pub onset_db: f64,
    pub k_max: usize,
    /// A segment ends where the smoothed PSD falls within this margin of the
    /// noise floor.
    pub end_margin_db: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { window: 5, onset_db: 6.0, k_max: 5, end_margin_db: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSegment {
    pub start_bin: usize,
    /// Exclusive.
    pub end_bin: usize,
    pub slope_db_per_bin: f64,
    pub onset_bin: usize,
}

/// Centered moving average with the window truncated at the edges.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(h);
            let b = (i + h + 1).min(n);
            x[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Noise floor (dB) as the median of the last 10% of bins.
pub fn tail_floor_db(psd_db: &[f64]) -> f64 {
    let n = psd_db.len();
    let k = (n / 10).max(1);
    median(&psd_db[n - k..])
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Onset detection by the first-order difference of the smoothed PSD.
///
/// A new process starts where the smoothed PSD rises by at least
/// `onset_db` over a run of positive differences and ends up that far above
/// the floor. Its segment extends to the next onset or to the point where
/// the smoothed PSD falls to `floor + end_margin_db`.
pub fn detect_processes(psd_db: &[f64], noise_floor_db: f64, cfg: &DetectConfig) -> Vec<ProcessSegment> {
    let n = psd_db.len();
    if n < 8 || cfg.k_max == 0 {
        return Vec::new();
    }
    let s = moving_average(psd_db, cfg.window.max(1));
    let d: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    let raw: Vec<f64> = psd_db.windows(2).map(|w| w[1] - w[0]).collect();
    let end_level = noise_floor_db + cfg.end_margin_db;
    let peak_level = noise_floor_db + cfg.onset_db;
    let half = cfg.window / 2;

    // (rise, onset bin)
    let mut onsets: Vec<(f64, usize)> = Vec::new();
    if s[0] >= peak_level && d[0] <= 0.0 {
        onsets.push((s[0] - noise_floor_db, 0));
    }
    let mut i = 0;
    while i < d.len() {
        if d[i] <= 0.0 {
            i += 1;
            continue;
        }
        let a = i;
        while i < d.len() && d[i] > 0.0 {
            i += 1;
        }
        let b = i; // s[b] is the top of the run
        let rise = s[b] - s[a];
        if rise >= cfg.onset_db && s[b] >= peak_level {
            let lo = a.saturating_sub(half);
            let hi = (b + half).min(raw.len());
            let mut best = lo;
            for k in lo..hi {
                if raw[k] > raw[best] {
                    best = k;
                }
            }
            onsets.push((rise, best + 1));
        }
    }
    let mut dropped: Vec<usize> = Vec::new();
    if onsets.len() > cfg.k_max {
        onsets.sort_by(|x, y| y.0.total_cmp(&x.0));
        dropped = onsets.split_off(cfg.k_max).into_iter().map(|o| o.1).collect();
    }
    let mut bins: Vec<usize> = onsets.into_iter().map(|o| o.1).collect();
    bins.sort_unstable();
    bins.dedup();

    let mut segs = Vec::with_capacity(bins.len());
    for (k, &on) in bins.iter().enumerate() {
        let limit = bins.get(k + 1).copied().unwrap_or(n);
        // a dropped onset merges its process into this segment
        let from = dropped.iter().copied().filter(|&d| d > on && d < limit).max().unwrap_or(on);
        let mut end = limit;
        for j in (from + half + 1).min(limit)..limit {
            if s[j] < end_level {
                end = j;
                break;
            }
        }
        let end = end.max(on + 1);
        let xs: Vec<f64> = (on + 1..end).map(|v| v as f64).collect();
        let ys: Vec<f64> = (on + 1..end).map(|v| psd_db[v]).collect();
        let slope = ls_slope(&xs, &ys).map(|v| v.0).unwrap_or(0.0);
        segs.push(ProcessSegment { start_bin: on, end_bin: end, slope_db_per_bin: slope, onset_bin: on });
    }
    segs
}

/// Initial delay-domain parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayInit {
    pub processes: Vec<NormalizedProcess>,
    pub alpha0: f64,
    pub warnings: Vec<String>,
}

impl DelayInit {
    pub fn to_physical(&self, grid: &FrequencyGrid) -> Vec<DmcDelayProcess> {
        self.processes.iter().map(|p| p.to_physical(grid)).collect()
    }
}

/// Per-segment initialization from a linear-power delay PSD.
///
/// `alpha1` is twice the (floor- and predecessor-corrected) value at the
/// onset, the decay is the least-squares slope of the log PSD over the rest
/// of the segment, and the floor is the median of the bins below
/// `noise_floor * 10^{margin/10}`.
pub fn init_dmc_delay(segments: &[ProcessSegment], psd: &[f64], noise_floor: f64, cfg: &DetectConfig) -> Result<DelayInit> {
    if segments.is_empty() {
        return Err(invalid!("at least one segment is required"));
    }
    if psd.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid!("PSD must be finite and non-negative"));
    }
    let thr = noise_floor * 10f64.powf(cfg.end_margin_db / 10.0);
    let below: Vec<f64> = psd.iter().copied().filter(|v| *v < thr).collect();
    let alpha0 = if below.is_empty() {
        psd.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        median(&below)
    }
    .max(f64::MIN_POSITIVE);
    let mut procs: Vec<NormalizedProcess> = Vec::new();
    let mut warnings = Vec::new();
    for seg in segments {
        if seg.end_bin <= seg.onset_bin || seg.end_bin - seg.onset_bin < 3 {
            warnings.push(format!(
                "segment at bin {} spans {} bins; skipped",
                seg.onset_bin,
                seg.end_bin.saturating_sub(seg.onset_bin)
            ));
            continue;
        }
        let rest = |n: usize| psd[n] - alpha0 - procs.iter().map(|p| p.psd(n as f64)).sum::<f64>();
        let on0 = seg.onset_bin;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for n in on0 + 2..seg.end_bin {
            let r = rest(n);
            if r > 0.0 {
                xs.push(n as f64);
                ys.push(r.ln());
            }
        }
        let fit = ls_slope(&xs, &ys).filter(|f| f.0 < 0.0);
        let beta = match fit {
            Some((s, _)) => -s,
            None => -seg.slope_db_per_bin * core::f64::consts::LN_10 / 10.0,
        }
        .clamp(1e-4, 2.0);
        // the onset bin sits at half the extrapolated decay; pick the
        // neighbour closest to that
        let mut on = seg.onset_bin;
        if let Some((s, c)) = fit {
            let miss = |n: usize| {
                let r = rest(n);
                if r > 0.0 {
                    (r.ln() - (c + s * n as f64) + core::f64::consts::LN_2).abs()
                } else {
                    f64::INFINITY
                }
            };
            for n in [on.saturating_sub(1), on + 1] {
                if n < seg.end_bin && miss(n) < miss(on) {
                    on = n;
                }
            }
        }
        let mut alpha1 = 2.0 * rest(on);
        if !(alpha1 > 0.0) {
            alpha1 = (on..seg.end_bin).map(rest).fold(0.0, f64::max);
        }
        if !(alpha1 > 0.0) {
            warnings.push(format!("segment at bin {on} has no power above the floor; skipped"));
            continue;
        }
        procs.push(NormalizedProcess { alpha1, beta, onset_bin: on as f64 });
    }
    if procs.is_empty() {
        return Err(invalid!("no usable segment"));
    }
    Ok(DelayInit { processes: procs, alpha0, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmcFitReport {
    pub processes: Vec<DmcDelayProcess>,
    pub noise_floor: f64,
    pub log_likelihood: Vec<f64>,
    pub power_capture_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl DmcFitReport {
    pub fn normalized(&self, grid: &FrequencyGrid) -> Vec<NormalizedProcess> {
        self.processes.iter().map(|p| p.normalized(grid)).collect()
    }
}

/// Parameter layout: `[ln alpha1, ln beta, onset_bin]` per process, then
/// `ln alpha0`.
pub struct DelayLikelihood<'a> {
    pub periodogram: &'a [f64],
    pub k: usize,
    pub jitter: f64,
}

const BETA_MAX: f64 = 2.0;

impl DelayLikelihood<'_> {
    pub fn unpack(&self, theta: &[f64]) -> (Vec<NormalizedProcess>, f64) {
        let procs = (0..self.k)
            .map(|i| NormalizedProcess {
                alpha1: theta[3 * i].exp(),
                beta: theta[3 * i + 1].exp(),
                onset_bin: theta[3 * i + 2],
            })
            .collect();
        (procs, theta[3 * self.k].exp())
    }

    pub fn pack(procs: &[NormalizedProcess], alpha0: f64) -> Vec<f64> {
        let mut t = Vec::with_capacity(3 * procs.len() + 1);
        for p in procs {
            t.extend_from_slice(&[p.alpha1.ln(), p.beta.ln(), p.onset_bin]);
        }
        t.push(alpha0.ln());
        t
    }

    fn eigenvalues(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let (procs, a0) = self.unpack(theta);
        let lam = psd_on_grid(&procs, a0 + self.jitter, self.periodogram.len());
        if lam.iter().all(|l| *l > 0.0 && l.is_finite()) {
            Some(lam)
        } else {
            None
        }
    }

    /// Jacobian of the eigenvalues, one column per parameter.
    pub fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let m = self.periodogram.len();
        let (procs, a0) = self.unpack(theta);
        let mut j = DMatrix::zeros(m, 3 * self.k + 1);
        for (i, p) in procs.iter().enumerate() {
            for n in 0..m {
                let psi = p.psd(n as f64);
                let x = n as f64 - p.onset_bin;
                j[(n, 3 * i)] = psi;
                j[(n, 3 * i + 1)] = -psi * p.beta * x;
                j[(n, 3 * i + 2)] = psi * (p.beta - logistic(-x / ONSET_WIDTH_BINS) / ONSET_WIDTH_BINS);
            }
        }
        for n in 0..m {
            j[(n, 3 * self.k)] = a0;
        }
        j
    }
}

impl LmProblem for DelayLikelihood<'_> {
    fn dim(&self) -> usize {
        3 * self.k + 1
    }

    fn samples(&self) -> usize {
        self.periodogram.len()
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        let lam = self.eigenvalues(theta)?;
        Some(-lam.iter().zip(self.periodogram).map(|(l, p)| l.ln() + p / l).sum::<f64>())
    }

    fn evaluate(&self, theta: &[f64]) -> Option<Evaluation> {
        let lam = self.eigenvalues(theta)?;
        let value = -lam.iter().zip(self.periodogram).map(|(l, p)| l.ln() + p / l).sum::<f64>();
        let jac = self.jacobian(theta);
        let d = self.dim();
        let mut gradient = DVector::zeros(d);
        let mut fisher = DMatrix::zeros(d, d);
        for (n, (l, p)) in lam.iter().zip(self.periodogram).enumerate() {
            let w = (p / l - 1.0) / l;
            let inv2 = 1.0 / (l * l);
            for a in 0..d {
                let ja = jac[(n, a)];
                gradient[a] += w * ja;
                for b in a..d {
                    fisher[(a, b)] += ja * jac[(n, b)] * inv2;
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                fisher[(a, b)] = fisher[(b, a)];
            }
        }
        Some(Evaluation { value, gradient, fisher })
    }

    fn project(&self, theta: &mut [f64]) {
        let m = self.periodogram.len() as f64;
        for i in 0..self.k {
            theta[3 * i + 1] = theta[3 * i + 1].min(BETA_MAX.ln());
            theta[3 * i + 2] = theta[3 * i + 2].clamp(0.0, m - 1.0);
        }
    }
}

/// Symmetric ratio of fitted to measured power above the floor.
pub fn power_capture_ratio(periodogram: &[f64], procs: &[NormalizedProcess], alpha0: f64) -> f64 {
    let fitted: f64 = psd_on_grid(procs, 0.0, periodogram.len()).iter().sum();
    let measured: f64 = periodogram.iter().map(|p| p - alpha0).sum();
    if !(fitted > 0.0 && measured > 0.0) {
        return 0.0;
    }
    (fitted / measured).min(measured / fitted)
}

/// ML fit of the frequency covariance model to a measured frequency
/// covariance (`M_f x M_f`).
pub fn fit_dmc_delay(r_meas: &CMat, init: &DelayInit, grid: &FrequencyGrid, cfg: &LmConfig) -> Result<DmcFitReport> {
    if r_meas.nrows() != grid.points || r_meas.ncols() != grid.points {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, grid has {} points",
            r_meas.nrows(),
            r_meas.ncols(),
            grid.points
        )));
    }
    let p = periodogram_from_covariance(r_meas);
    fit_dmc_delay_periodogram(&p, init, grid, cfg)
}

/// Same fit driven by the circulant-basis periodogram directly.
pub fn fit_dmc_delay_periodogram(
    periodogram: &[f64],
    init: &DelayInit,
    grid: &FrequencyGrid,
    cfg: &LmConfig,
) -> Result<DmcFitReport> {
    if init.processes.is_empty() {
        return Err(invalid!("initial guess has no process"));
    }
    if periodogram.len() != grid.points {
        return Err(Error::DimensionMismatch(format!(
            "periodogram has {} bins, grid has {} points",
            periodogram.len(),
            grid.points
        )));
    }
    let mut problem = DelayLikelihood { periodogram, k: init.processes.len(), jitter: 0.0 };
    let theta0 = DelayLikelihood::pack(&init.processes, init.alpha0.max(f64::MIN_POSITIVE));
    let mut warnings = init.warnings.clone();
    if problem.value(&theta0).is_none() {
        problem.jitter = init.alpha0 * 1e-6;
        warnings.push(String::from("model covariance singular at init; added jitter"));
        if problem.value(&theta0).is_none() {
            return Err(Error::Numerical(format!(
                "model covariance singular at init (alpha0 = {})",
                init.alpha0
            )));
        }
    }
    let out = maximize(&problem, &theta0, cfg)?;
    let (procs, a0) = problem.unpack(&out.theta);
    let ratio = power_capture_ratio(periodogram, &procs, a0);
    let mut processes: Vec<DmcDelayProcess> = procs.iter().map(|p| p.to_physical(grid)).collect();
    processes.sort_by(|a, b| a.base_delay_s.total_cmp(&b.base_delay_s));
    Ok(DmcFitReport {
        processes,
        noise_floor: a0 + problem.jitter,
        log_likelihood: out.trace,
        power_capture_ratio: ratio,
        iterations: out.iterations,
        converged: out.converged,
        warnings,
    })
}

/// Detection, initialization and fit in one call, starting from the
/// circulant-basis periodogram.
pub fn estimate_delay_processes(
    periodogram: &[f64],
    grid: &FrequencyGrid,
    detect: &DetectConfig,
    lm: &LmConfig,
) -> Result<Option<DmcFitReport>> {
    let db: Vec<f64> = periodogram.iter().map(|v| 10.0 * v.max(1e-300).log10()).collect();
    let floor_db = tail_floor_db(&db);
    let segs = detect_processes(&db, floor_db, detect);
    if segs.is_empty() {
        return Ok(None);
    }
    let init = init_dmc_delay(&segs, periodogram, 10f64.powf(floor_db / 10.0), detect)?;
    fit_dmc_delay_periodogram(periodogram, &init, grid, lm).map(Some)
}
