//! VMF mixture estimation for the spatial DMC covariance of one link end.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, LN_2, PI};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::lm::{maximize, Evaluation, LmConfig, LmProblem};
use crate::array::ArrayModel;
use crate::error::invalid;
use crate::grid::{ChannelTensor, FrequencyGrid};
use crate::linalg::{hpd_inverse_logdet, CMat};
use crate::math::{angular_distance_deg, deg2rad, dot3, rad2deg, unit_vector, wrap_deg};
use crate::mimo::{bartlett_from_covariance, side_covariance, AngleGrid, AngularSpectrum, BartlettMode, Side};
use crate::vmf::{d_ln_vmf_dkappa, ln_vmf, SphereQuadrature, VmfComponent, VmfMixture};
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartlettInitConfig {
    pub angle_step_deg: f64,
    pub q_max: usize,
    /// Peaks weaker than this (dB, relative to the strongest, above the
    /// spectrum minimum) are ignored.
    pub peak_floor_db: f64,
    pub min_separation_deg: f64,
    /// Below this dynamic range of the gain-normalized spectrum the field is
    /// treated as isotropic.
    pub flat_db: f64,
}

impl Default for BartlettInitConfig {
    fn default() -> Self {
        Self { angle_step_deg: 2.0, q_max: 3, peak_floor_db: -6.0, min_separation_deg: 20.0, flat_db: 3.0 }
    }
}

/// VMF initial guess from the Bartlett spectrum of one side of a residual
/// tensor.
pub fn bartlett_init_angular(h: &ChannelTensor, side: Side, cfg: &BartlettInitConfig) -> Result<VmfMixture> {
    if !h.is_finite() {
        return Err(invalid!("channel tensor contains non-finite values"));
    }
    let array = match side {
        Side::Rx => h.rx(),
        Side::Tx => h.tx(),
    };
    bartlett_init_from_covariance(&side_covariance(h, side), array, h.grid().center_hz, cfg)
}

/// Same as [`bartlett_init_angular`] from a side covariance.
///
/// Isotropy is judged on the gain-normalized (projection) spectrum. Lobes
/// are located on the classical spectrum, whose element-gain weighting
/// separates a lobe from its mirror image behind a planar array.
pub fn bartlett_init_from_covariance(
    s: &CMat,
    array: &ArrayModel,
    frequency: f64,
    cfg: &BartlettInitConfig,
) -> Result<VmfMixture> {
    if cfg.q_max == 0 {
        return Err(invalid!("q_max must be at least 1"));
    }
    if s.nrows() != array.port_count() || s.ncols() != array.port_count() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "covariance is {}x{}, array has {} ports",
            s.nrows(),
            s.ncols(),
            array.port_count()
        )));
    }
    let grid = AngleGrid::uniform(cfg.angle_step_deg)?;
    let proj = bartlett_from_covariance(s, array, frequency, &grid, BartlettMode::Projection);
    if proj.dynamic_range_db() < cfg.flat_db {
        return Ok(VmfMixture::uniform());
    }
    let spec = bartlett_from_covariance(s, array, frequency, &grid, BartlettMode::Classical);
    let floor = spec.power.iter().copied().fold(f64::INFINITY, f64::min);
    let peaks = find_peaks(&spec, floor, cfg);
    if peaks.is_empty() {
        return Ok(VmfMixture::uniform());
    }
    let classical = |s: &CMat, dir: &[f64; 3]| classical_power(s, array, frequency, dir);
    let total: f64 = peaks.iter().map(|p| p.2).sum();
    let mut comps = Vec::with_capacity(peaks.len());
    for (el, az, excess) in &peaks {
        let dir = unit_vector(deg2rad(*el), deg2rad(*az));
        let w_obs = half_width_deg(|d| classical(s, d) - floor, &dir, *excess);
        // beam of a point source at the peak
        let mut f = vec![ZERO; 2 * array.port_count()];
        array.fill_response(&dir, frequency, &mut f);
        let p = array.port_count();
        let beam = CMat::from_fn(p, p, |i, j| f[i] * f[j].conj() + f[p + i] * f[p + j].conj());
        let top = classical(&beam, &dir);
        let w_beam = half_width_deg(|d| classical(&beam, d), &dir, top);
        let kappa = if w_obs >= 90.0 {
            0.0
        } else {
            let k_obs = LN_2 / (1.0 - deg2rad(w_obs).cos());
            let k_beam = LN_2 / (1.0 - deg2rad(w_beam).cos());
            if k_obs < 0.95 * k_beam {
                1.0 / (1.0 / k_obs - 1.0 / k_beam)
            } else {
                20.0 * k_beam
            }
        };
        comps.push(VmfComponent { mean_elevation_deg: *el, mean_azimuth_deg: *az, concentration: kappa, weight: excess / total });
    }
    normalize_weights(&mut comps);
    VmfMixture::new(comps)
}

fn normalize_weights(comps: &mut [VmfComponent]) {
    let s: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= s;
    }
    // absorb rounding so the sum is 1 to machine precision
    let s: f64 = comps.iter().skip(1).map(|c| c.weight).sum();
    comps[0].weight = 1.0 - s;
}

fn classical_power(s: &CMat, array: &ArrayModel, frequency: f64, dir: &[f64; 3]) -> f64 {
    let p = array.port_count();
    let mut f = vec![ZERO; 2 * p];
    array.fill_response(dir, frequency, &mut f);
    let mut acc = 0.0;
    for col in f.chunks_exact(p) {
        let mut q = ZERO;
        for i in 0..p {
            let mut row = ZERO;
            for k in 0..p {
                row += s[(i, k)] * col[k];
            }
            q += col[i].conj() * row;
        }
        acc += q.re;
    }
    acc
}

/// Mean angular radius at which `g` first drops to half of `top`, over eight
/// bearings around `center`.
fn half_width_deg<G: Fn(&[f64; 3]) -> f64>(g: G, center: &[f64; 3], top: f64) -> f64 {
    // orthonormal frame around the center
    let helper = if center[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = normalize(cross(center, &helper));
    let e2 = cross(center, &e1);
    let bearings = 8;
    let mut sum = 0.0;
    for b in 0..bearings {
        let phi = 2.0 * PI * b as f64 / bearings as f64;
        let t = [
            phi.cos() * e1[0] + phi.sin() * e2[0],
            phi.cos() * e1[1] + phi.sin() * e2[1],
            phi.cos() * e1[2] + phi.sin() * e2[2],
        ];
        let mut r = 90.0;
        let mut prev = 0.0;
        let mut prev_v = top;
        let mut step = 0.25;
        while prev < 90.0 {
            let a = deg2rad(prev + step);
            let d = [
                a.cos() * center[0] + a.sin() * t[0],
                a.cos() * center[1] + a.sin() * t[1],
                a.cos() * center[2] + a.sin() * t[2],
            ];
            let v = g(&d);
            if v <= 0.5 * top {
                // linear interpolation inside the step
                let frac = if prev_v > v { (prev_v - 0.5 * top) / (prev_v - v) } else { 1.0 };
                r = prev + step * frac.clamp(0.0, 1.0);
                break;
            }
            prev += step;
            prev_v = v;
            if prev >= 10.0 {
                step = 1.0;
            }
        }
        sum += r;
    }
    sum / bearings as f64
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot3(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Local maxima above the relative floor, greedily thinned by angular
/// separation. Returns (el, az, power above `floor`) sorted by power.
fn find_peaks(spec: &AngularSpectrum, floor: f64, cfg: &BartlettInitConfig) -> Vec<(f64, f64, f64)> {
    let n_el = spec.elevations_deg.len();
    let n_az = spec.azimuths_deg.len();
    let top = spec.power.iter().copied().fold(f64::NEG_INFINITY, f64::max) - floor;
    if !(top > 0.0) {
        return Vec::new();
    }
    let min_excess = top * 10f64.powf(cfg.peak_floor_db / 10.0);
    let mut cand = Vec::new();
    for i in 0..n_el {
        for j in 0..n_az {
            let v = spec.get(i, j);
            if v - floor < min_excess {
                continue;
            }
            let mut is_max = true;
            'nb: for di in [-1i64, 0, 1] {
                let ii = i as i64 + di;
                if ii < 0 || ii >= n_el as i64 {
                    continue;
                }
                for dj in [-1i64, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let jj = (j as i64 + dj).rem_euclid(n_az as i64) as usize;
                    if spec.get(ii as usize, jj) > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                cand.push((spec.elevations_deg[i], spec.azimuths_deg[j], v - floor));
            }
        }
    }
    cand.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for c in cand {
        if out.len() == cfg.q_max {
            break;
        }
        if out.iter().all(|o| angular_distance_deg(o.0, o.1, c.0, c.1) >= cfg.min_separation_deg) {
            out.push(c);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AngularFitConfig {
    pub lm: LmConfig,
    pub quadrature_elevation: usize,
    pub quadrature_azimuth: usize,
}

impl Default for AngularFitConfig {
    fn default() -> Self {
        Self { lm: LmConfig::default(), quadrature_elevation: 64, quadrature_azimuth: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularFitReport {
    pub mixture: VmfMixture,
    /// Spatially white power per port, relative to `tr(R) / ports`.
    pub white_fraction: f64,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const KAPPA_MIN: f64 = 1e-4;
const KAPPA_MAX: f64 = 1e4;
const KAPPA_INIT_MIN: f64 = 1e-3;
// e^{-36} is below double precision relative to the peak
const LOG_CUTOFF: f64 = -36.0;

/// Gaussian log-likelihood of the spatial covariance model
/// `sum_q w_q int f_q a a^H + s2 I`.
///
/// Parameter layout: `[ln w, el, az, ln kappa]` per component (angles in
/// radians), then `ln s2`.
pub struct AngularLikelihood<'a> {
    r: &'a CMat,
    q: usize,
    dirs: &'a [[f64; 3]],
    weights: &'a [f64],
    /// Scalar port responses, node-major.
    resp: Vec<Complex64>,
    ports: usize,
    ln_s2_min: f64,
}

impl<'a> AngularLikelihood<'a> {
    pub fn new(r: &'a CMat, q: usize, array: &ArrayModel, frequency: f64, quad: &'a SphereQuadrature) -> Self {
        let p = array.port_count();
        let mut resp = vec![ZERO; quad.len() * p];
        for (n, d) in quad.dirs.iter().enumerate() {
            array.fill_scalar_response(d, frequency, &mut resp[n * p..(n + 1) * p]);
        }
        let tr: f64 = (0..p).map(|i| r[(i, i)].re).sum::<f64>() / p as f64;
        Self { r, q, dirs: &quad.dirs, weights: &quad.weights, resp, ports: p, ln_s2_min: (1e-10 * tr.max(f64::MIN_POSITIVE)).ln() }
    }

    pub fn pack(mix: &VmfMixture, scale: f64, s2: f64) -> Vec<f64> {
        let mut t = Vec::with_capacity(4 * mix.components.len() + 1);
        for c in &mix.components {
            t.extend_from_slice(&[
                (c.weight * scale).max(f64::MIN_POSITIVE).ln(),
                deg2rad(c.mean_elevation_deg),
                deg2rad(c.mean_azimuth_deg),
                c.concentration.clamp(KAPPA_INIT_MIN, KAPPA_MAX).ln(),
            ]);
        }
        t.push(s2.ln());
        t
    }

    /// Mixture with normalized weights and the white power.
    pub fn unpack(&self, theta: &[f64]) -> (VmfMixture, f64) {
        let mut comps: Vec<VmfComponent> = (0..self.q)
            .map(|i| {
                let el = rad2deg(theta[4 * i + 1]).clamp(-90.0, 90.0);
                VmfComponent {
                    mean_elevation_deg: el,
                    mean_azimuth_deg: wrap_deg(rad2deg(theta[4 * i + 2])),
                    concentration: theta[4 * i + 3].exp(),
                    weight: theta[4 * i].exp(),
                }
            })
            .collect();
        normalize_weights(&mut comps);
        (VmfMixture { components: comps }, theta[4 * self.q].exp())
    }

    /// Model covariance and, when requested, its parameter derivatives.
    pub fn model(&self, theta: &[f64], derivs: bool) -> (CMat, Vec<CMat>) {
        let p = self.ports;
        let nd = if derivs { 4 * self.q + 1 } else { 0 };
        let mut sigma = vec![ZERO; p * p];
        let mut ds: Vec<Vec<Complex64>> = (0..nd).map(|_| vec![ZERO; p * p]).collect();
        let comps: Vec<([f64; 3], [f64; 3], [f64; 3], f64, f64)> = (0..self.q)
            .map(|i| {
                let (el, az) = (theta[4 * i + 1], theta[4 * i + 2]);
                let mu = unit_vector(el, az);
                let d_el = [-el.sin() * az.cos(), -el.sin() * az.sin(), el.cos()];
                let d_az = [-el.cos() * az.sin(), el.cos() * az.cos(), 0.0];
                (mu, d_el, d_az, theta[4 * i + 3].exp(), theta[4 * i].exp())
            })
            .collect();
        let mut coef = vec![0.0; nd];
        for (n, dir) in self.dirs.iter().enumerate() {
            let mut base_total = 0.0;
            coef.iter_mut().for_each(|c| *c = 0.0);
            for (i, (mu, d_el, d_az, kappa, w)) in comps.iter().enumerate() {
                let c = dot3(mu, dir);
                if kappa * (c - 1.0) < LOG_CUTOFF {
                    continue;
                }
                let base = w * ln_vmf(*kappa, c).exp() * self.weights[n];
                base_total += base;
                if derivs {
                    coef[4 * i] = base;
                    coef[4 * i + 1] = base * kappa * dot3(d_el, dir);
                    coef[4 * i + 2] = base * kappa * dot3(d_az, dir);
                    coef[4 * i + 3] = base * kappa * d_ln_vmf_dkappa(*kappa, c);
                }
            }
            if base_total == 0.0 {
                continue;
            }
            let a = &self.resp[n * p..(n + 1) * p];
            for j in 0..p {
                let aj = a[j].conj();
                for i in j..p {
                    let o = a[i] * aj;
                    sigma[j * p + i] += o * base_total;
                    for (k, d) in ds.iter_mut().enumerate() {
                        if coef[k] != 0.0 {
                            d[j * p + i] += o * coef[k];
                        }
                    }
                }
            }
        }
        let s2 = theta[4 * self.q].exp();
        let finish = |v: Vec<Complex64>, diag: f64| {
            let mut m = CMat::from_vec(p, p, v);
            for j in 0..p {
                m[(j, j)].re += diag;
                m[(j, j)].im = 0.0;
                for i in j + 1..p {
                    m[(j, i)] = m[(i, j)].conj();
                }
            }
            m
        };
        let sigma = finish(sigma, s2);
        let mut out = Vec::with_capacity(nd);
        for (k, d) in ds.into_iter().enumerate() {
            out.push(finish(d, if k == 4 * self.q { s2 } else { 0.0 }));
        }
        (sigma, out)
    }
}

fn re_trace_prod(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            let (x, y) = (a[(i, k)], b[(k, i)]);
            s += x.re * y.re - x.im * y.im;
        }
    }
    s
}

impl LmProblem for AngularLikelihood<'_> {
    fn dim(&self) -> usize {
        4 * self.q + 1
    }

    fn samples(&self) -> usize {
        self.ports
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        let (sigma, _) = self.model(theta, false);
        let (inv, logdet) = hpd_inverse_logdet(&sigma)?;
        let v = -logdet - re_trace_prod(&inv, self.r);
        v.is_finite().then_some(v)
    }

    fn evaluate(&self, theta: &[f64]) -> Option<Evaluation> {
        let (sigma, ds) = self.model(theta, true);
        let (inv, logdet) = hpd_inverse_logdet(&sigma)?;
        let value = -logdet - re_trace_prod(&inv, self.r);
        if !value.is_finite() {
            return None;
        }
        let w = &inv * self.r * &inv - &inv;
        let d = self.dim();
        let b: Vec<CMat> = ds.iter().map(|di| &inv * di).collect();
        let gradient = DVector::from_fn(d, |i, _| re_trace_prod(&ds[i], &w));
        let mut fisher = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = re_trace_prod(&b[i], &b[j]);
                fisher[(i, j)] = v;
                fisher[(j, i)] = v;
            }
        }
        Some(Evaluation { value, gradient, fisher })
    }

    fn project(&self, theta: &mut [f64]) {
        for i in 0..self.q {
            theta[4 * i + 1] = theta[4 * i + 1].clamp(-FRAC_PI_2, FRAC_PI_2);
            let az = theta[4 * i + 2];
            theta[4 * i + 2] = az - 2.0 * PI * ((az + PI) / (2.0 * PI)).floor();
            theta[4 * i + 3] = theta[4 * i + 3].clamp(KAPPA_MIN.ln(), KAPPA_MAX.ln());
        }
        let k = 4 * self.q;
        theta[k] = theta[k].max(self.ln_s2_min);
    }
}

/// ML fit of a VMF mixture (plus a white term) to a measured spatial
/// covariance of `array`.
pub fn fit_dmc_angular(
    r_meas: &CMat,
    init: &VmfMixture,
    array: &ArrayModel,
    grid: &FrequencyGrid,
    cfg: &AngularFitConfig,
) -> Result<AngularFitReport> {
    init.validate()?;
    let p = array.port_count();
    if r_meas.nrows() != p || r_meas.ncols() != p {
        return Err(Error::DimensionMismatch(alloc::format!(
            "covariance is {}x{}, array has {p} ports",
            r_meas.nrows(),
            r_meas.ncols()
        )));
    }
    if r_meas.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(invalid!("covariance contains non-finite values"));
    }
    let tr: f64 = (0..p).map(|i| r_meas[(i, i)].re).sum();
    if !(tr > 0.0) {
        return Err(invalid!("covariance has no power"));
    }
    let quad = SphereQuadrature::new(cfg.quadrature_elevation, cfg.quadrature_azimuth);
    let problem = AngularLikelihood::new(r_meas, init.components.len(), array, grid.center_hz, &quad);
    // scale the mixture to carry 99% of the trace
    let unit = AngularLikelihood::pack(init, 1.0, 1e-300);
    let (g, _) = problem.model(&unit, false);
    let g_tr: f64 = (0..p).map(|i| g[(i, i)].re).sum();
    let theta0 = AngularLikelihood::pack(init, 0.99 * tr / g_tr.max(f64::MIN_POSITIVE), 0.01 * tr / p as f64);
    let out = maximize(&problem, &theta0, &cfg.lm)?;
    let (mixture, s2) = problem.unpack(&out.theta);
    Ok(AngularFitReport {
        mixture,
        white_fraction: s2 * p as f64 / tr,
        log_likelihood: out.trace,
        iterations: out.iterations,
        converged: out.converged,
    })
}
