//! Bartlett angular spectra, channel normalization, singular values,
//! capacity and DMC power fractions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::array::ArrayModel;
use crate::error::invalid;
use crate::linalg::{singular_values as svd_values, CMat};
use crate::math::{deg2rad, unit_vector};
use crate::smc::{rx_spatial_marginal, smc_residual, tx_spatial_marginal};
use crate::synth::SmcPath;
use crate::{ChannelTensor, Error, Result};

/// Link end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Tx,
    Rx,
}

impl core::fmt::Display for Side {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Side::Tx => "tx",
            Side::Rx => "rx",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BartlettMode {
    /// `tr((F^H F)^{-1} F^H S F)`: power in the polarimetric subspace of
    /// each direction, independent of the element gain there.
    #[default]
    Projection,
    /// `tr(F^H S F)`.
    Classical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub elevations_deg: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
}

impl AngleGrid {
    /// Full sphere with a uniform step (degrees).
    pub fn uniform(step_deg: f64) -> Result<Self> {
        if !(step_deg > 0.0 && step_deg <= 90.0) {
            return Err(invalid!("angle step {step_deg} outside (0, 90]"));
        }
        let n_el = (180.0 / step_deg).round() as usize + 1;
        let n_az = (360.0 / step_deg).round() as usize;
        Ok(Self {
            elevations_deg: (0..n_el).map(|i| -90.0 + i as f64 * 180.0 / (n_el - 1) as f64).collect(),
            azimuths_deg: (0..n_az).map(|j| -180.0 + j as f64 * 360.0 / n_az as f64).collect(),
        })
    }
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self::uniform(2.0).expect("valid step")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularSpectrum {
    pub elevations_deg: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
    /// Linear power, row-major over (elevation, azimuth).
    pub power: Vec<f64>,
    /// Set when a ridge was needed to invert `F^H F` somewhere on the grid.
    pub ridge_applied: bool,
}

impl AngularSpectrum {
    pub fn get(&self, i_el: usize, i_az: usize) -> f64 {
        self.power[i_el * self.azimuths_deg.len() + i_az]
    }

    pub fn power_db(&self) -> Vec<f64> {
        self.power.iter().map(|p| 10.0 * p.max(1e-300).log10()).collect()
    }

    /// Grid indices of the global maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, p) in self.power.iter().enumerate() {
            if *p > self.power[best] {
                best = k;
            }
        }
        let n_az = self.azimuths_deg.len();
        (best / n_az, best % n_az)
    }

    /// Max over min in dB.
    pub fn dynamic_range_db(&self) -> f64 {
        let max = self.power.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.power.iter().copied().fold(f64::INFINITY, f64::min);
        10.0 * (max / min.max(1e-300)).log10()
    }
}

/// Frequency-averaged covariance of one link end.
pub fn side_covariance(h: &ChannelTensor, side: Side) -> CMat {
    match side {
        Side::Rx => rx_spatial_marginal(h),
        Side::Tx => tx_spatial_marginal(h),
    }
}

/// Bartlett spectrum of a tensor over an angle grid, averaged over
/// frequency.
pub fn bartlett_spectrum(h: &ChannelTensor, side: Side, grid: &AngleGrid, mode: BartlettMode) -> Result<AngularSpectrum> {
    if !h.is_finite() {
        return Err(invalid!("channel tensor contains non-finite values"));
    }
    let array = match side {
        Side::Rx => h.rx(),
        Side::Tx => h.tx(),
    };
    let s = side_covariance(h, side);
    Ok(bartlett_from_covariance(&s, array, h.grid().center_hz, grid, mode))
}

/// Bartlett spectrum of a side covariance `S` (`ports x ports`).
pub fn bartlett_from_covariance(
    s: &CMat,
    array: &ArrayModel,
    frequency: f64,
    grid: &AngleGrid,
    mode: BartlettMode,
) -> AngularSpectrum {
    let p = array.port_count();
    let mut f = vec![Complex64::new(0.0, 0.0); 2 * p];
    let mut power = Vec::with_capacity(grid.elevations_deg.len() * grid.azimuths_deg.len());
    let mut ridge_applied = false;
    for el in &grid.elevations_deg {
        for az in &grid.azimuths_deg {
            let dir = unit_vector(deg2rad(*el), deg2rad(*az));
            array.fill_response(&dir, frequency, &mut f);
            let (v, hcol) = f.split_at(p);
            // 2x2 blocks of F^H S F and F^H F
            let sv: Vec<Complex64> = (0..p).map(|i| (0..p).map(|k| s[(i, k)] * v[k]).sum()).collect();
            let sh: Vec<Complex64> = (0..p).map(|i| (0..p).map(|k| s[(i, k)] * hcol[k]).sum()).collect();
            let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>();
            let m = [[dot(v, &sv), dot(v, &sh)], [dot(hcol, &sv), dot(hcol, &sh)]];
            let val = match mode {
                BartlettMode::Classical => m[0][0].re + m[1][1].re,
                BartlettMode::Projection => {
                    let mut g = [[dot(v, v), dot(v, hcol)], [dot(hcol, v), dot(hcol, hcol)]];
                    let scale = (g[0][0].re + g[1][1].re).max(f64::MIN_POSITIVE);
                    let mut det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
                    if det.norm() <= 1e-9 * scale * scale {
                        g[0][0] += 1e-9 * scale;
                        g[1][1] += 1e-9 * scale;
                        det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
                        ridge_applied = true;
                    }
                    // tr(G^{-1} M)
                    ((g[1][1] * m[0][0] - g[0][1] * m[1][0] - g[1][0] * m[0][1] + g[0][0] * m[1][1]) / det).re
                }
            };
            power.push(val.max(0.0));
        }
    }
    AngularSpectrum {
        elevations_deg: grid.elevations_deg.clone(),
        azimuths_deg: grid.azimuths_deg.clone(),
        power,
        ridge_applied,
    }
}

/// Scales `h` so that `mean_f ||H(f)||_F^2 = M_T M_R`. Returns the
/// normalized tensor and `gamma` with `H_bar = H / sqrt(gamma)`.
pub fn normalize_channel(h: &ChannelTensor) -> Result<(ChannelTensor, f64)> {
    let target = h.links() as f64;
    let mean = h.power() / h.freq_points() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(invalid!("cannot normalize a zero or non-finite tensor"));
    }
    let gamma = mean / target;
    let mut out = h.clone();
    out.scale(Complex64::new(1.0 / gamma.sqrt(), 0.0));
    Ok((out, gamma))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvProfile {
    /// Top-`k` singular values of every frequency slice.
    pub per_frequency: Vec<Vec<f64>>,
    /// Frequency average of `per_frequency`.
    pub mean: Vec<f64>,
    /// `sum_{i<=k} sigma_i^2 / ||H||_F^2` over the whole band.
    pub power_share: f64,
}

/// Descending singular values of each slice.
pub fn singular_values(h: &ChannelTensor, k: usize) -> Result<SvProfile> {
    let kmax = h.rx_ports().min(h.tx_ports());
    if k == 0 || k > kmax {
        return Err(invalid!("k = {k} outside 1..={kmax}"));
    }
    let mf = h.freq_points();
    let mut per_frequency = Vec::with_capacity(mf);
    let mut mean = vec![0.0; k];
    let mut top = 0.0;
    for f in 0..mf {
        let sv = svd_values(&h.slice(f));
        let head: Vec<f64> = sv.into_iter().take(k).collect();
        for (m, s) in mean.iter_mut().zip(&head) {
            *m += s / mf as f64;
        }
        top += head.iter().map(|s| s * s).sum::<f64>();
        per_frequency.push(head);
    }
    let total = h.power();
    let power_share = if total > 0.0 { top / total } else { 0.0 };
    Ok(SvProfile { per_frequency, mean, power_share })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub snr_db: f64,
    /// bits/s/Hz
    pub capacity: f64,
    pub sv_profile: Vec<f64>,
    pub gamma: f64,
}

/// `mean_f log2 det(I + rho / M_T H_bar H_bar^H)` of an already normalized
/// tensor.
pub fn capacity(h_bar: &ChannelTensor, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() && snr_db != f64::NEG_INFINITY {
        return Err(invalid!("SNR must be finite"));
    }
    let rho = 10f64.powf(snr_db / 10.0);
    let (mr, mt, mf) = (h_bar.rx_ports(), h_bar.tx_ports(), h_bar.freq_points());
    let c = Complex64::new(rho / mt as f64, 0.0);
    let mut total = 0.0;
    for f in 0..mf {
        let s = h_bar.slice(f);
        let a = CMat::identity(mr, mr) + &s * s.adjoint() * c;
        let ch = a
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("capacity matrix not positive definite at bin {f}")))?;
        let l = ch.l_dirty();
        total += (0..mr).map(|i| 2.0 * l[(i, i)].re.log2()).sum::<f64>();
    }
    Ok(total / mf as f64)
}

/// Normalizes `h`, then reports capacity and the mean SV profile.
pub fn capacity_report(h: &ChannelTensor, snr_db: f64, k: usize) -> Result<CapacityResult> {
    let (h_bar, gamma) = normalize_channel(h)?;
    Ok(CapacityResult {
        snr_db,
        capacity: capacity(&h_bar, snr_db)?,
        sv_profile: singular_values(&h_bar, k)?.mean,
        gamma,
    })
}

/// Share of the tensor power left after removing the specular paths, with
/// the noise energy `alpha0 M_f M_R M_T` taken off the residual. Clamped to
/// `[0, 1]`.
pub fn dmc_power_fraction(h: &ChannelTensor, paths: &[SmcPath], noise_floor: f64) -> Result<f64> {
    if !(noise_floor >= 0.0 && noise_floor.is_finite()) {
        return Err(invalid!("noise floor must be finite and >= 0"));
    }
    let total = h.power();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let resid = smc_residual(h, paths)?.power();
    let noise = noise_floor * (h.freq_points() * h.links()) as f64;
    Ok(((resid - noise) / (total - noise).max(f64::MIN_POSITIVE)).clamp(0.0, 1.0))
}
