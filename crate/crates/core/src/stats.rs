//! Link statistics: delay PSD, MPC extraction, path loss, delay and angular
//! dispersion, K-factor, small-scale fading fits and polarization ratios.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::array::Polarization;
use crate::error::invalid;
use crate::fft;
use crate::math::{bessel_i0e, deg2rad, golden_max, ln_bessel_i0, median, rad2deg};
use crate::synth::SmcPath;
use crate::{ChannelTensor, Result, SPEED_OF_LIGHT};

/// Margin added to the tail median when estimating the noise floor.
pub const NOISE_MARGIN_DB: f64 = 3.0;
/// K-factor sentinels (dB) for the no-fading and no-LOS limits.
pub const KF_SENTINEL_DB: f64 = 40.0;

/// Delay-domain power of one frequency response, `|x_n|^2` with
/// `x = DFT(h) / M`. Bin `n` sits at `n * dtau`; the bins sum to
/// `mean_f |h|^2`.
pub fn delay_psd_link(h: &[Complex64]) -> Vec<f64> {
    let m = h.len();
    let mut buf = h.to_vec();
    fft::forward(&mut buf);
    let s = 1.0 / (m as f64 * m as f64);
    buf.iter().map(|v| v.norm_sqr() * s).collect()
}

/// Delay PSD averaged over the given `(rx, tx)` links, or over all links.
pub fn delay_psd(h: &ChannelTensor, links: Option<&[(usize, usize)]>) -> Result<Vec<f64>> {
    let mf = h.freq_points();
    let all: Vec<(usize, usize)>;
    let links = match links {
        Some(l) => l,
        None => {
            all = (0..h.rx_ports()).flat_map(|r| (0..h.tx_ports()).map(move |t| (r, t))).collect();
            &all
        }
    };
    if links.is_empty() {
        return Err(invalid!("no links selected"));
    }
    let mut acc = vec![0.0; mf];
    for &(r, t) in links {
        if r >= h.rx_ports() || t >= h.tx_ports() {
            return Err(invalid!("link ({r}, {t}) out of range"));
        }
        for (a, v) in acc.iter_mut().zip(delay_psd_link(h.link(r, t))) {
            *a += v;
        }
    }
    let s = 1.0 / links.len() as f64;
    acc.iter_mut().for_each(|v| *v *= s);
    Ok(acc)
}

/// Links whose Tx port has polarization `tx` and Rx port `rx`.
pub fn polarization_links(h: &ChannelTensor, tx: Polarization, rx: Polarization) -> Vec<(usize, usize)> {
    let te = h.tx().elements();
    let re = h.rx().elements();
    let mut out = Vec::new();
    for (r, er) in re.iter().enumerate() {
        for (t, et) in te.iter().enumerate() {
            if er.polarization == rx && et.polarization == tx {
                out.push((r, t));
            }
        }
    }
    out
}

/// Noise floor (dB): median of the last 10% of bins plus [`NOISE_MARGIN_DB`].
pub fn estimate_noise_floor_db(psd: &[f64]) -> Result<f64> {
    if psd.is_empty() {
        return Err(invalid!("empty PSD"));
    }
    let k = (psd.len() / 10).max(1);
    let m = median(&psd[psd.len() - k..]);
    Ok(10.0 * m.max(1e-300).log10() + NOISE_MARGIN_DB)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mpc {
    pub delay_s: f64,
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcExtraction {
    pub mpcs: Vec<Mpc>,
    pub threshold_db: f64,
    /// Sum of the MPC powers.
    pub received_power: f64,
}

/// Local maxima of the PSD at or above
/// `max(noise_floor + 10 dB, peak - 20 dB)`.
pub fn extract_mpcs(psd: &[f64], noise_floor_db: f64, delay_resolution_s: f64) -> MpcExtraction {
    if psd.is_empty() {
        return MpcExtraction { mpcs: Vec::new(), threshold_db: f64::NAN, received_power: 0.0 };
    }
    let peak = psd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let peak_db = 10.0 * peak.max(1e-300).log10();
    let threshold_db = (noise_floor_db + 10.0).max(peak_db - 20.0);
    let thr = 10f64.powf(threshold_db / 10.0);
    let n = psd.len();
    let mut mpcs = Vec::new();
    for i in 0..n {
        let v = psd[i];
        let left = if i > 0 { psd[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < n { psd[i + 1] } else { f64::NEG_INFINITY };
        if v >= thr && v >= left && v >= right {
            mpcs.push(Mpc { delay_s: i as f64 * delay_resolution_s, power: v });
        }
    }
    let received_power = mpcs.iter().map(|m| m.power).sum();
    MpcExtraction { mpcs, threshold_db, received_power }
}

/// `-10 log10(sum P_l)` for unit transmit power.
pub fn path_loss_db(mpcs: &[Mpc]) -> Result<f64> {
    let p: f64 = mpcs.iter().map(|m| m.power).sum();
    if !(p > 0.0) {
        return Err(invalid!("no received power"));
    }
    Ok(-10.0 * p.log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PathLossModel {
    Ci,
    Fi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossFit {
    pub model: PathLossModel,
    pub n: f64,
    /// dB at 1 m.
    pub beta: f64,
    /// Shadow-fading standard deviation (dB).
    pub sigma: f64,
    pub fc_ghz: f64,
}

impl PathLossFit {
    pub fn predict(&self, distance_m: f64) -> f64 {
        self.beta + 10.0 * self.n * distance_m.log10()
    }
}

/// Free-space loss at 1 m, `20 log10(4 pi f_c / c)`.
pub fn ci_intercept_db(fc_ghz: f64) -> f64 {
    20.0 * (4.0 * core::f64::consts::PI * fc_ghz * 1e9 / SPEED_OF_LIGHT).log10()
}

/// Least-squares CI or FI fit to `(distance m, PL dB)` pairs.
pub fn fit_pathloss(records: &[(f64, f64)], model: PathLossModel, fc_ghz: f64) -> Result<PathLossFit> {
    if records.is_empty() {
        return Err(invalid!("no path-loss records"));
    }
    if records.iter().any(|(d, pl)| !(*d > 0.0 && d.is_finite() && pl.is_finite())) {
        return Err(invalid!("distances must be positive and values finite"));
    }
    if !(fc_ghz > 0.0) {
        return Err(invalid!("carrier must be positive"));
    }
    let xs: Vec<f64> = records.iter().map(|(d, _)| 10.0 * d.log10()).collect();
    let ys: Vec<f64> = records.iter().map(|(_, pl)| *pl).collect();
    let nrec = xs.len() as f64;
    let (n, beta) = match model {
        PathLossModel::Ci => {
            let beta = ci_intercept_db(fc_ghz);
            let sxx: f64 = xs.iter().map(|x| x * x).sum();
            if sxx == 0.0 {
                return Err(invalid!("CI fit needs a distance other than 1 m"));
            }
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * (y - beta)).sum();
            (sxy / sxx, beta)
        }
        PathLossModel::Fi => {
            let mx = xs.iter().sum::<f64>() / nrec;
            let my = ys.iter().sum::<f64>() / nrec;
            let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            if sxx <= 1e-300 {
                return Err(invalid!("FI fit needs at least two distinct distances"));
            }
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let n = sxy / sxx;
            (n, my - n * mx)
        }
    };
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - beta - n * x).powi(2)).sum();
    Ok(PathLossFit { model, n, beta, sigma: (sse / nrec).sqrt(), fc_ghz })
}

/// Drops records closer than `min_distance_m`.
pub fn filter_min_distance(records: &[(f64, f64)], min_distance_m: f64) -> Vec<(f64, f64)> {
    records.iter().copied().filter(|(d, _)| *d >= min_distance_m).collect()
}

/// `tau_last - tau_first`.
pub fn excess_delay(mpcs: &[Mpc]) -> Result<f64> {
    if mpcs.is_empty() {
        return Err(invalid!("excess delay of an empty MPC set"));
    }
    let lo = mpcs.iter().map(|m| m.delay_s).fold(f64::INFINITY, f64::min);
    let hi = mpcs.iter().map(|m| m.delay_s).fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo)
}

fn weighted_rms(values: &[f64], powers: &[f64]) -> f64 {
    let pt: f64 = powers.iter().sum();
    let m = values.iter().zip(powers).map(|(v, p)| v * p).sum::<f64>() / pt;
    let var = values.iter().zip(powers).map(|(v, p)| p * (v - m) * (v - m)).sum::<f64>() / pt;
    var.max(0.0).sqrt()
}

/// Power-weighted RMS delay spread.
pub fn delay_spread(mpcs: &[Mpc]) -> Result<f64> {
    if mpcs.is_empty() {
        return Err(invalid!("delay spread of an empty MPC set"));
    }
    if mpcs.iter().any(|m| !(m.power > 0.0)) {
        return Err(invalid!("MPC powers must be positive"));
    }
    let d: Vec<f64> = mpcs.iter().map(|m| m.delay_s).collect();
    let p: Vec<f64> = mpcs.iter().map(|m| m.power).collect();
    Ok(weighted_rms(&d, &p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KfSentinel {
    /// No fading at all: `K -> +inf`.
    NoFading,
    /// Fading at or beyond Rayleigh: `K -> 0`.
    NoDominant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFactor {
    pub db: f64,
    pub sentinel: Option<KfSentinel>,
}

/// Moment-based Rician K-factor from `x = |H(f)|^2`:
/// `gamma = Var[x] / E[x]^2`, `K = sqrt(1 - gamma) / (1 - sqrt(1 - gamma))`.
pub fn kfactor_moment(h: &[Complex64]) -> Result<KFactor> {
    if h.len() < 8 {
        return Err(invalid!("K-factor needs at least 8 samples, got {}", h.len()));
    }
    let x: Vec<f64> = h.iter().map(|v| v.norm_sqr()).collect();
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid!("response has no finite power"));
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let gamma = var / (m * m);
    if gamma >= 1.0 {
        return Ok(KFactor { db: -KF_SENTINEL_DB, sentinel: Some(KfSentinel::NoDominant) });
    }
    let s = (1.0 - gamma).sqrt();
    if s >= 1.0 {
        return Ok(KFactor { db: KF_SENTINEL_DB, sentinel: Some(KfSentinel::NoFading) });
    }
    let k = s / (1.0 - s);
    let db = 10.0 * k.log10();
    if db >= KF_SENTINEL_DB {
        return Ok(KFactor { db: KF_SENTINEL_DB, sentinel: Some(KfSentinel::NoFading) });
    }
    if db <= -KF_SENTINEL_DB {
        return Ok(KFactor { db: -KF_SENTINEL_DB, sentinel: Some(KfSentinel::NoDominant) });
    }
    Ok(KFactor { db, sentinel: None })
}

/// Wraps degrees into `(-180, 180]`.
fn wrap_half_open_deg(x: f64) -> f64 {
    let mut y = x % 360.0;
    if y <= -180.0 {
        y += 360.0;
    } else if y > 180.0 {
        y -= 360.0;
    }
    y
}

/// Power-weighted RMS angular spread (degrees) after rotating the angles by
/// their power-weighted circular mean.
pub fn angular_spread(angles_deg: &[f64], powers: &[f64]) -> Result<f64> {
    if angles_deg.is_empty() || angles_deg.len() != powers.len() {
        return Err(invalid!("angles and powers must be non-empty and of equal length"));
    }
    if powers.iter().any(|p| !(*p > 0.0 && p.is_finite())) || angles_deg.iter().any(|a| !a.is_finite()) {
        return Err(invalid!("powers must be positive and angles finite"));
    }
    let (mut s, mut c) = (0.0, 0.0);
    for (a, p) in angles_deg.iter().zip(powers) {
        s += p * deg2rad(*a).sin();
        c += p * deg2rad(*a).cos();
    }
    let mu = rad2deg(s.atan2(c));
    let norm: Vec<f64> = angles_deg.iter().map(|a| wrap_half_open_deg(a - mu)).collect();
    Ok(weighted_rms(&norm, powers))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularSpreads {
    pub asd: f64,
    pub asa: f64,
    pub esd: f64,
    pub esa: f64,
}

/// Spreads of departure/arrival azimuth and elevation over a path set,
/// weighted by path power.
pub fn path_angular_spreads(paths: &[SmcPath]) -> Result<AngularSpreads> {
    let p: Vec<f64> = paths.iter().map(|x| x.power()).collect();
    let pick = |f: fn(&SmcPath) -> f64| paths.iter().map(f).collect::<Vec<f64>>();
    Ok(AngularSpreads {
        asd: angular_spread(&pick(|x| x.aod_deg), &p)?,
        asa: angular_spread(&pick(|x| x.aoa_deg), &p)?,
        esd: angular_spread(&pick(|x| x.eod_deg), &p)?,
        esa: angular_spread(&pick(|x| x.eoa_deg), &p)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsfDistribution {
    Rayleigh,
    Rician,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsfFit {
    pub selected: SsfDistribution,
    pub rayleigh_sigma: f64,
    pub rician_nu: f64,
    pub rician_sigma: f64,
    /// `10 log10(nu^2 / (2 sigma^2))` of the Rician fit.
    pub k_db: f64,
    pub ks_rayleigh: f64,
    pub ks_rician: f64,
}

fn rician_loglik(r: &[f64], nu: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    r.iter()
        .map(|x| x.ln() - s2.ln() - (x * x + nu * nu) / (2.0 * s2) + ln_bessel_i0(x * nu / s2))
        .sum()
}

/// Rician CDF at the sorted points `xs`, by trapezoidal integration of the
/// density.
fn rician_cdf_sorted(xs: &[f64], nu: f64, sigma: f64) -> Vec<f64> {
    let s2 = sigma * sigma;
    let pdf = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let z = x * nu / s2;
        x / s2 * (-(x - nu) * (x - nu) / (2.0 * s2)).exp() * bessel_i0e(z)
    };
    let top = xs.last().copied().unwrap_or(0.0);
    let steps = 20_000;
    let h = top / steps as f64;
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    let mut x0 = 0.0;
    let mut f0 = pdf(0.0);
    let mut it = xs.iter().peekable();
    for k in 1..=steps {
        let x1 = k as f64 * h;
        let f1 = pdf(x1);
        while let Some(&&q) = it.peek() {
            if q > x1 {
                break;
            }
            // partial trapezoid up to q
            let fq = pdf(q);
            out.push(acc + 0.5 * (f0 + fq) * (q - x0));
            it.next();
        }
        acc += 0.5 * (f0 + f1) * h;
        x0 = x1;
        f0 = f1;
    }
    for _ in it {
        out.push(acc);
    }
    out.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn ks_statistic(sorted: &[f64], cdf: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    cdf.iter()
        .enumerate()
        .map(|(i, f)| (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs()))
        .fold(0.0, f64::max)
}

/// ML Rayleigh and Rician fits to amplitude samples, selected by the
/// Kolmogorov-Smirnov statistic (ties go to Rayleigh).
pub fn fit_ssf_amplitude(samples: &[f64]) -> Result<SsfFit> {
    if samples.len() < 50 {
        return Err(invalid!("amplitude fit needs at least 50 samples, got {}", samples.len()));
    }
    if samples.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(invalid!("amplitudes must be positive and finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted[sorted.len() - 1] - sorted[0] <= 1e-12 * sorted[0] {
        return Err(invalid!("amplitude samples have zero variance"));
    }
    let n = samples.len() as f64;
    let omega = samples.iter().map(|x| x * x).sum::<f64>() / n;
    let rayleigh_sigma = (omega / 2.0).sqrt();
    // The Rician ML solution keeps nu^2 + 2 sigma^2 = mean r^2, so it is a
    // 1-D search over s = K / (1 + K).
    let params = |s: f64| ((omega * s).sqrt(), (omega * (1.0 - s) / 2.0).sqrt());
    let (s, _) = golden_max(
        |s| {
            let (nu, sigma) = params(s);
            rician_loglik(&sorted, nu, sigma)
        },
        0.0,
        0.9999,
        1e-10,
    );
    let (rician_nu, rician_sigma) = params(s);
    let k = s / (1.0 - s);
    let ray_cdf: Vec<f64> = sorted.iter().map(|x| 1.0 - (-x * x / (2.0 * rayleigh_sigma * rayleigh_sigma)).exp()).collect();
    let ks_rayleigh = ks_statistic(&sorted, &ray_cdf);
    let ks_rician = ks_statistic(&sorted, &rician_cdf_sorted(&sorted, rician_nu, rician_sigma));
    Ok(SsfFit {
        selected: if ks_rician < ks_rayleigh { SsfDistribution::Rician } else { SsfDistribution::Rayleigh },
        rayleigh_sigma,
        rician_nu,
        rician_sigma,
        k_db: 10.0 * k.max(1e-300).log10(),
        ks_rayleigh,
        ks_rician,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationRatios {
    pub xpr_h_db: f64,
    pub xpr_v_db: f64,
    pub cpr_db: f64,
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// XPR/CPR from polarization-resolved PSDs, where `p_xy` is the PSD from
/// Tx polarization `x` to Rx polarization `y`.
pub fn xpr_cpr_from_psd(hh: &[f64], hv: &[f64], vh: &[f64], vv: &[f64]) -> Result<PolarizationRatios> {
    let n = hh.len();
    if hv.len() != n || vh.len() != n || vv.len() != n {
        return Err(invalid!("polarization PSDs differ in length"));
    }
    let s = |v: &[f64]| v.iter().sum::<f64>();
    Ok(PolarizationRatios {
        xpr_h_db: ratio_db(s(hh), s(hv)),
        xpr_v_db: ratio_db(s(vv), s(vh)),
        cpr_db: ratio_db(s(hh), s(vv)),
    })
}

/// Per-path ratios with `alpha` indexed (Rx, Tx):
/// `XPR_H = |a_HH|^2 / |a_VH|^2`, `XPR_V = |a_VV|^2 / |a_HV|^2`,
/// `CPR = |a_HH|^2 / |a_VV|^2`.
pub fn xpr_cpr_per_path(path: &SmcPath) -> Result<PolarizationRatios> {
    if path.amp.iter().flatten().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
        return Err(invalid!("path amplitude is not finite"));
    }
    let [[vv, vh], [hv, hh]] = path.amp;
    Ok(PolarizationRatios {
        xpr_h_db: ratio_db(hh.norm_sqr(), vh.norm_sqr()),
        xpr_v_db: ratio_db(vv.norm_sqr(), hv.norm_sqr()),
        cpr_db: ratio_db(hh.norm_sqr(), vv.norm_sqr()),
    })
}

/// Ratios of a tensor from its polarization-resolved delay PSDs.
pub fn xpr_cpr_from_tensor(h: &ChannelTensor) -> Result<PolarizationRatios> {
    use Polarization::{H, V};
    let psd = |tx, rx| delay_psd(h, Some(&polarization_links(h, tx, rx)));
    xpr_cpr_from_psd(&psd(H, H)?, &psd(H, V)?, &psd(V, H)?, &psd(V, V)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LspTransform {
    Identity,
    Log10,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LspFit {
    pub mu: f64,
    pub sigma: f64,
}

/// Sample mean and standard deviation after `transform`.
pub fn fit_lsp_distribution(values: &[f64], transform: LspTransform) -> Result<LspFit> {
    if values.len() < 2 {
        return Err(invalid!("distribution fit needs at least 2 values"));
    }
    let t: Vec<f64> = match transform {
        LspTransform::Identity => values.to_vec(),
        LspTransform::Log10 => {
            if values.iter().any(|v| !(*v > 0.0)) {
                return Err(invalid!("log10 transform needs positive values"));
            }
            values.iter().map(|v| v.log10()).collect()
        }
    };
    if t.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("values must be finite"));
    }
    let n = t.len() as f64;
    let mu = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0);
    Ok(LspFit { mu, sigma: var.sqrt() })
}

/// Per-position scalar statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub position: String,
    pub distance_3d_m: f64,
    pub los: bool,
    pub pl_db: f64,
    pub ds_s: f64,
    pub ed_s: f64,
    pub kf_db: f64,
    pub asd_deg: f64,
    pub asa_deg: f64,
    pub esd_deg: f64,
    pub esa_deg: f64,
    pub xpr_h_db: f64,
    pub xpr_v_db: f64,
    pub cpr_db: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_single, build_upa, ElementPattern, HALF_WAVELENGTH_5G5};
    use crate::grid::FrequencyGrid;
    use crate::rng::{complex_normal, normal, seeded};
    use crate::synth::synth_smc;
    use alloc::sync::Arc;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn mpc(d_ns: f64, p: f64) -> Mpc {
        Mpc { delay_s: d_ns * 1e-9, power: p }
    }

    #[test]
    fn tone_and_parseval() {
        let h = vec![c(0.6, -0.3); 64];
        let p = delay_psd_link(&h);
        assert!((p[0] - 0.45).abs() < 1e-15);
        assert!(p[1..].iter().all(|v| *v < 1e-28));
        let mut r = seeded(1);
        let h: Vec<Complex64> = (0..100).map(|_| complex_normal(&mut r)).collect();
        let p = delay_psd_link(&h);
        let mean = h.iter().map(|v| v.norm_sqr()).sum::<f64>() / 100.0;
        assert!((p.iter().sum::<f64>() - mean).abs() < 1e-12 * mean);
    }

    #[test]
    fn psd_peaks_at_planted_delays() {
        let a = Arc::new(build_single(Polarization::V, ElementPattern::isotropic()).unwrap());
        let g = FrequencyGrid::sounder(256);
        let mk = |bin: f64, amp: f64| SmcPath {
            eoa_deg: 0.0,
            aoa_deg: 0.0,
            eod_deg: 0.0,
            aod_deg: 0.0,
            delay_s: bin * g.delay_resolution(),
            amp: [[c(amp, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]],
        };
        let h = synth_smc(&[mk(12.0, 1.0), mk(40.0, 0.5)], &a, &a, &g).unwrap();
        let p = delay_psd(&h, None).unwrap();
        let ext = extract_mpcs(&p, -80.0, g.delay_resolution());
        let bins: Vec<usize> = ext.mpcs.iter().map(|m| (m.delay_s / g.delay_resolution()).round() as usize).collect();
        assert_eq!(bins, vec![12, 40]);
    }

    #[test]
    fn threshold_rules() {
        let mut p = vec![1e-6; 50];
        p[10] = 1e-3; // 30 dB above the floor
        let e = extract_mpcs(&p, -60.0, 1.0);
        assert!((e.threshold_db - (-50.0)).abs() < 1e-9);
        p[10] = 10f64.powf(-4.5); // 15 dB above
        let e = extract_mpcs(&p, -60.0, 1.0);
        assert!((e.threshold_db - (-50.0)).abs() < 1e-9);
        let mut p = vec![1e-9; 50];
        p[5] = 1e-5;
        p[20] = 1e-5;
        let e = extract_mpcs(&p, -60.0, 1.0);
        assert!((e.threshold_db - (-50.0)).abs() < 1e-12);
        assert_eq!(e.mpcs.len(), 2);
        assert!(extract_mpcs(&[], -60.0, 1.0).mpcs.is_empty());
    }

    #[test]
    fn pathloss_examples() {
        assert!((ci_intercept_db(5.5) - 47.25).abs() < 0.005);
        let fit = PathLossFit { model: PathLossModel::Ci, n: 1.63, beta: ci_intercept_db(5.5), sigma: 0.0, fc_ghz: 5.5 };
        assert!((fit.predict(10.0) - 63.55).abs() < 0.01);
        let recs: Vec<(f64, f64)> = [2.0, 5.0, 9.0, 20.0].iter().map(|d| (*d, ci_intercept_db(5.5) + 20.0 * d.log10())).collect();
        let ci = fit_pathloss(&recs, PathLossModel::Ci, 5.5).unwrap();
        assert!((ci.n - 2.0).abs() < 1e-9 && ci.sigma < 1e-9);
        let recs: Vec<(f64, f64)> = [3.0, 6.0, 12.0, 40.0].iter().map(|d| (*d, 38.0 + 27.0 * d.log10())).collect();
        let fi = fit_pathloss(&recs, PathLossModel::Fi, 5.5).unwrap();
        assert!((fi.n - 2.7).abs() < 1e-9 && (fi.beta - 38.0).abs() < 1e-9);
        let same = [(4.0, 60.0), (4.0, 61.0)];
        assert!(fit_pathloss(&same, PathLossModel::Fi, 5.5).is_err());
        assert!(fit_pathloss(&same, PathLossModel::Ci, 5.5).is_ok());
        assert_eq!(filter_min_distance(&[(3.0, 1.0), (6.0, 2.0)], 5.1), vec![(6.0, 2.0)]);
    }

    #[test]
    fn delay_metrics() {
        assert_eq!(excess_delay(&[mpc(10.0, 1.0)]).unwrap(), 0.0);
        let ed = excess_delay(&[mpc(10.0, 1.0), mpc(50.0, 0.3), mpc(300.0, 0.1)]).unwrap();
        assert!((ed - 290e-9).abs() < 1e-18);
        assert_eq!(delay_spread(&[mpc(10.0, 1.0)]).unwrap(), 0.0);
        let two = [mpc(0.0, 1.0), mpc(100.0, 1.0)];
        assert!((delay_spread(&two).unwrap() - 50e-9).abs() < 1e-20);
        assert!(excess_delay(&two).unwrap() >= 2.0 * delay_spread(&two).unwrap() - 1e-20);
        assert!(excess_delay(&[]).is_err() && delay_spread(&[]).is_err());
    }

    #[test]
    fn angular_spread_examples() {
        assert_eq!(angular_spread(&[33.0, 33.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((angular_spread(&[90.0, -90.0], &[1.0, 1.0]).unwrap() - 90.0).abs() < 1e-12);
        assert!((angular_spread(&[179.0, -179.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-9);
        assert!(angular_spread(&[], &[]).is_err());
    }

    #[test]
    fn kfactor_limits_and_recovery() {
        let flat = vec![c(0.3, 0.4); 32];
        let k = kfactor_moment(&flat).unwrap();
        assert_eq!(k.sentinel, Some(KfSentinel::NoFading));
        assert_eq!(k.db, KF_SENTINEL_DB);
        let mut r = seeded(8);
        let k_lin = 10f64.powf(0.5);
        let nu = (k_lin / (1.0 + k_lin)).sqrt();
        let s = (1.0 / (1.0 + k_lin)).sqrt();
        let h: Vec<Complex64> = (0..100_000).map(|_| c(nu, 0.0) + complex_normal(&mut r) * s).collect();
        let est = kfactor_moment(&h).unwrap();
        assert!((est.db - 5.0).abs() < 0.3, "{}", est.db);
        let mut meds = Vec::new();
        for t in 0..21 {
            let mut r = seeded(100 + t);
            let h: Vec<Complex64> = (0..1000).map(|_| complex_normal(&mut r)).collect();
            meds.push(kfactor_moment(&h).unwrap().db);
        }
        assert!(median(&meds) < -5.0);
    }

    fn rician(k_db: f64, n: usize, seed: u64) -> Vec<f64> {
        let k = 10f64.powf(k_db / 10.0);
        let nu = (k / (1.0 + k)).sqrt();
        let s = (1.0 / (2.0 * (1.0 + k))).sqrt();
        let mut r = seeded(seed);
        (0..n).map(|_| c(nu + s * normal(&mut r), s * normal(&mut r)).norm()).collect()
    }

    #[test]
    fn ssf_fits() {
        for (k_db, seed) in [(6.45, 1), (3.82, 2)] {
            let f = fit_ssf_amplitude(&rician(k_db, 5000, seed)).unwrap();
            assert_eq!(f.selected, SsfDistribution::Rician);
            assert!((f.k_db - k_db).abs() < 1.0, "{k_db}: {}", f.k_db);
        }
        let f = fit_ssf_amplitude(&rician(-300.0, 5000, 3)).unwrap();
        assert!(f.selected == SsfDistribution::Rayleigh || f.k_db < -5.0, "{f:?}");
        assert!(fit_ssf_amplitude(&[1.0; 60]).is_err());
        assert!(fit_ssf_amplitude(&[1.0; 10]).is_err());
    }

    #[test]
    fn rician_cdf_matches_empirical() {
        let xs = {
            let mut v = rician(4.0, 20_000, 9);
            v.sort_by(|a, b| a.total_cmp(b));
            v
        };
        let k = 10f64.powf(0.4);
        let cdf = rician_cdf_sorted(&xs, (k / (1.0 + k)).sqrt(), (1.0 / (2.0 * (1.0 + k))).sqrt());
        assert!(ks_statistic(&xs, &cdf) < 0.015);
        assert!((cdf[cdf.len() - 1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn polarization_ratio_examples() {
        let p = vec![0.2; 16];
        let r = xpr_cpr_from_psd(&p, &p, &p, &p).unwrap();
        assert_eq!((r.xpr_h_db, r.xpr_v_db, r.cpr_db), (0.0, 0.0, 0.0));
        let hv: Vec<f64> = p.iter().map(|v| v / 100.0).collect();
        let r = xpr_cpr_from_psd(&p, &hv, &p, &p).unwrap();
        assert!((r.xpr_h_db - 20.0).abs() < 1e-12);
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let mut path = SmcPath { eoa_deg: 0.0, aoa_deg: 0.0, eod_deg: 0.0, aod_deg: 0.0, delay_s: 0.0, amp: [[one, zero], [zero, one]] };
        let r = xpr_cpr_per_path(&path).unwrap();
        assert!(r.xpr_h_db.is_infinite() && r.xpr_v_db.is_infinite() && r.cpr_db == 0.0);
        path.amp[0][1] = c(0.1, 0.0);
        assert!((xpr_cpr_per_path(&path).unwrap().xpr_h_db - 20.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_polarization_split() {
        let a = Arc::new(build_upa(1, 1, HALF_WAVELENGTH_5G5, ElementPattern::default()).unwrap());
        // ports: 0 = V, 1 = H at both ends
        let g = FrequencyGrid::sounder(8);
        let mut data = vec![c(0.0, 0.0); 2 * 2 * 8];
        let set = |d: &mut Vec<Complex64>, r: usize, t: usize, v: f64| {
            for f in 0..8 {
                d[(r * 2 + t) * 8 + f] = c(v, 0.0);
            }
        };
        set(&mut data, 0, 0, 1.0); // V -> V
        set(&mut data, 1, 1, 2.0); // H -> H
        set(&mut data, 0, 1, 0.2); // H -> V
        set(&mut data, 1, 0, 0.1); // V -> H
        let h = ChannelTensor::from_data(a.clone(), a, g, data).unwrap();
        let r = xpr_cpr_from_tensor(&h).unwrap();
        assert!((r.xpr_h_db - 20.0).abs() < 1e-9);
        assert!((r.xpr_v_db - 20.0).abs() < 1e-9);
        assert!((r.cpr_db - 10.0 * 4f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn lsp_fits() {
        let mut r = seeded(5);
        let ds: Vec<f64> = (0..10_000).map(|_| 10f64.powf(-7.41 + 0.76 * normal(&mut r))).collect();
        let f = fit_lsp_distribution(&ds, LspTransform::Log10).unwrap();
        assert!((f.mu + 7.41).abs() < 0.05 && (f.sigma - 0.76).abs() < 0.05);
        let asd: Vec<f64> = (0..10_000).map(|_| 10f64.powf(1.78 + 0.1 * normal(&mut r))).collect();
        let f = fit_lsp_distribution(&asd, LspTransform::Log10).unwrap();
        assert!((f.mu - 1.78).abs() < 0.02 && (f.sigma - 0.1).abs() < 0.02);
        assert_eq!(fit_lsp_distribution(&[3.0; 5], LspTransform::Identity).unwrap().sigma, 0.0);
        assert!(fit_lsp_distribution(&[1.0, -1.0], LspTransform::Log10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn threshold_is_max_of_rules(vals in proptest::collection::vec(1e-9f64..1.0, 8..64), floor in -100.0f64..-10.0) {
            let e = extract_mpcs(&vals, floor, 1.0);
            let peak = vals.iter().copied().fold(0.0, f64::max);
            let expect = (floor + 10.0).max(10.0 * peak.log10() - 20.0);
            prop_assert!((e.threshold_db - expect).abs() < 1e-12);
            let thr = 10f64.powf(expect / 10.0);
            prop_assert!(e.mpcs.iter().all(|m| m.power >= thr));
        }

        #[test]
        fn delay_spread_invariances(
            pts in proptest::collection::vec((0.0f64..500.0, 1e-3f64..1.0), 2..12),
            scale in 1e-3f64..1e3,
            shift in 0.0f64..200.0,
        ) {
            let m: Vec<Mpc> = pts.iter().map(|(d, p)| mpc(*d, *p)).collect();
            let ds = delay_spread(&m).unwrap();
            let ed = excess_delay(&m).unwrap();
            prop_assert!(ds >= 0.0 && ds <= ed + 1e-18);
            let scaled: Vec<Mpc> = m.iter().map(|x| Mpc { power: x.power * scale, ..*x }).collect();
            prop_assert!((delay_spread(&scaled).unwrap() - ds).abs() <= 1e-12 * ds.max(1e-15));
            let moved: Vec<Mpc> = m.iter().map(|x| Mpc { delay_s: x.delay_s + shift * 1e-9, ..*x }).collect();
            prop_assert!((delay_spread(&moved).unwrap() - ds).abs() <= 1e-9 * ds.max(1e-12));
        }

        #[test]
        fn angular_spread_rotation_invariant(
            pts in proptest::collection::vec((-180.0f64..180.0, 1e-3f64..1.0), 1..12),
            rot in -360.0f64..360.0,
        ) {
            let a: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let s = angular_spread(&a, &p).unwrap();
            prop_assert!((0.0..=180.0).contains(&s));
            let rotated: Vec<f64> = a.iter().map(|x| x + rot).collect();
            prop_assert!((angular_spread(&rotated, &p).unwrap() - s).abs() < 1e-7);
        }
    }
}
