//! Forward models (SMC superposition, DMC delay PSD and covariances) and
//! channel tensor synthesis.

use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::array::ArrayModel;
use crate::error::invalid;
use crate::fft;
use crate::grid::{ChannelTensor, FrequencyGrid};
use crate::linalg::{hermitize, psd_factor, CMat};
use crate::math::{deg2rad, softplus, unit_vector};
use crate::rng::{complex_normal, seeded};
use crate::vmf::{SphereQuadrature, VmfMixture};
use crate::{Error, Result};

/// Width (in delay bins) of the smooth step that switches a DMC process on.
/// The logistic edge gives exactly half power at the base delay.
pub const ONSET_WIDTH_BINS: f64 = 0.25;

/// Metadata key set when a covariance factor needed eigenvalue clipping.
pub const META_FACTOR_CLIPPED: &str = "dmc_factor_clipped";
pub const META_SEED: &str = "seed";

/// One specular path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcPath {
    pub eoa_deg: f64,
    pub aoa_deg: f64,
    pub eod_deg: f64,
    pub aod_deg: f64,
    pub delay_s: f64,
    /// `[[VV, VH], [HV, HH]]`; rows index the Rx polarization, columns Tx.
    pub amp: [[Complex64; 2]; 2],
}

impl SmcPath {
    /// `||alpha||_F^2`.
    pub fn power(&self) -> f64 {
        self.amp.iter().flatten().map(|a| a.norm_sqr()).sum()
    }

    pub fn amp_matrix(&self) -> CMat {
        CMat::from_fn(2, 2, |i, j| self.amp[i][j])
    }

    pub fn validate(&self, grid: &FrequencyGrid) -> Result<()> {
        if !(self.delay_s >= 0.0 && self.delay_s < grid.delay_span()) {
            return Err(invalid!(
                "path delay {} s outside [0, {})",
                self.delay_s,
                grid.delay_span()
            ));
        }
        if self.amp.iter().flatten().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(invalid!("path amplitude is not finite"));
        }
        for (name, el, az) in [("arrival", self.eoa_deg, self.aoa_deg), ("departure", self.eod_deg, self.aod_deg)] {
            if !(-90.0..=90.0).contains(&el) || !(-180.0..180.0).contains(&az) {
                return Err(invalid!("{name} angles ({el}, {az}) out of range"));
            }
        }
        Ok(())
    }
}

/// One exponentially decaying DMC delay process (physical units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmcDelayProcess {
    pub alpha1: f64,
    /// Power decay rate `B_d` (1/s).
    pub decay: f64,
    pub base_delay_s: f64,
}

impl DmcDelayProcess {
    pub fn validate(&self, grid: &FrequencyGrid) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha1.is_finite()) {
            return Err(invalid!("alpha1 must be finite and >= 0"));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(invalid!("decay must be positive"));
        }
        if !(self.base_delay_s >= 0.0 && self.base_delay_s < grid.delay_span()) {
            return Err(invalid!("base delay {} s outside the delay span", self.base_delay_s));
        }
        Ok(())
    }

    pub fn normalized(&self, grid: &FrequencyGrid) -> NormalizedProcess {
        NormalizedProcess {
            alpha1: self.alpha1,
            beta: self.decay * grid.delay_resolution(),
            onset_bin: self.base_delay_s / grid.delay_resolution(),
        }
    }
}

/// A delay process in grid units: decay per bin and onset in bins.
/// The normalized base delay is `onset_bin / M_f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedProcess {
    pub alpha1: f64,
    pub beta: f64,
    pub onset_bin: f64,
}

impl NormalizedProcess {
    pub fn to_physical(&self, grid: &FrequencyGrid) -> DmcDelayProcess {
        DmcDelayProcess {
            alpha1: self.alpha1,
            decay: self.beta / grid.delay_resolution(),
            base_delay_s: self.onset_bin * grid.delay_resolution(),
        }
    }

    pub fn normalized_base_delay(&self, points: usize) -> f64 {
        self.onset_bin / points as f64
    }

    /// `ln psi(n)`: `ln alpha1 - beta (n - n_d) + ln sigma((n - n_d) / w)`.
    #[inline]
    pub fn ln_psd(&self, n: f64) -> f64 {
        let x = n - self.onset_bin;
        self.alpha1.ln() - self.beta * x - softplus(-x / ONSET_WIDTH_BINS)
    }

    #[inline]
    pub fn psd(&self, n: f64) -> f64 {
        if self.alpha1 == 0.0 {
            return 0.0;
        }
        self.ln_psd(n).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmcModel {
    pub processes: Vec<DmcDelayProcess>,
    pub noise_floor: f64,
    pub vmf_rx: VmfMixture,
    pub vmf_tx: VmfMixture,
}

impl DmcModel {
    pub fn validate(&self, grid: &FrequencyGrid) -> Result<()> {
        for p in &self.processes {
            p.validate(grid)?;
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(invalid!("noise floor must be finite and >= 0"));
        }
        self.vmf_rx.validate()?;
        self.vmf_tx.validate()
    }

    pub fn normalized(&self, grid: &FrequencyGrid) -> Vec<NormalizedProcess> {
        self.processes.iter().map(|p| p.normalized(grid)).collect()
    }

    /// Model with no dense component at all.
    pub fn none() -> Self {
        Self {
            processes: Vec::new(),
            noise_floor: 0.0,
            vmf_rx: VmfMixture::uniform(),
            vmf_tx: VmfMixture::uniform(),
        }
    }
}

/// Sum of process PSDs plus the floor at fractional bin `n`.
pub fn psd_at_bin(processes: &[NormalizedProcess], alpha0: f64, n: f64) -> f64 {
    alpha0 + processes.iter().map(|p| p.psd(n)).sum::<f64>()
}

/// Delay PSD on the grid bins `0..M_f`.
pub fn psd_on_grid(processes: &[NormalizedProcess], alpha0: f64, points: usize) -> Vec<f64> {
    (0..points).map(|n| psd_at_bin(processes, alpha0, n as f64)).collect()
}

/// Delay PSD of the DMC model at arbitrary delays (seconds).
///
/// The PSD sits on the floor before each base delay, passes through
/// `alpha1 / 2` at the base delay and decays as `alpha1 e^{-B_d (tau - tau_d)}`
/// after it.
pub fn dmc_delay_psd(model: &DmcModel, grid: &FrequencyGrid, delays_s: &[f64]) -> Vec<f64> {
    let procs = model.normalized(grid);
    let dt = grid.delay_resolution();
    delays_s.iter().map(|t| psd_at_bin(&procs, model.noise_floor, t / dt)).collect()
}

/// First row of the frequency covariance: `kappa = DFT(psi) / M_f`, where
/// `psi` is the process PSD (floor excluded) sampled on the delay grid.
pub fn frequency_kernel(processes: &[NormalizedProcess], points: usize) -> Vec<Complex64> {
    let mut k: Vec<Complex64> = psd_on_grid(processes, 0.0, points)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    fft::forward(&mut k);
    let s = 1.0 / points as f64;
    k.iter_mut().for_each(|v| *v *= s);
    k
}

/// Continuous-delay one-sided exponential kernel,
/// `(alpha1 / M) e^{-j 2 pi m tau~} / (beta + j 2 pi m / M)`.
///
/// It agrees with [`frequency_kernel`] at small lags but is not an exact
/// transform pair of the sampled PSD; kept for comparison.
pub fn continuous_kernel(p: &NormalizedProcess, points: usize) -> Vec<Complex64> {
    let m_f = points as f64;
    let tau = p.onset_bin / m_f;
    (0..points)
        .map(|m| {
            let w = 2.0 * PI * m as f64 / m_f;
            Complex64::from_polar(p.alpha1 / m_f, -2.0 * PI * m as f64 * tau) / Complex64::new(p.beta, w)
        })
        .collect()
}

/// Hermitian circulant matrix with first row `row`, plus `alpha0 I`.
pub fn circulant_covariance(row: &[Complex64], alpha0: f64) -> CMat {
    let n = row.len();
    CMat::from_fn(n, n, |i, j| {
        let v = row[(j + n - i) % n];
        if i == j {
            v + alpha0
        } else {
            v
        }
    })
}

/// `R_F = alpha0 I + Toeplitz(kappa, kappa^H)` for the given processes.
pub fn dmc_frequency_covariance(
    processes: &[DmcDelayProcess],
    noise_floor: f64,
    grid: &FrequencyGrid,
) -> Result<CMat> {
    for p in processes {
        p.validate(grid)?;
    }
    if !(noise_floor >= 0.0) {
        return Err(invalid!("noise floor must be >= 0"));
    }
    let procs: Vec<NormalizedProcess> = processes.iter().map(|p| p.normalized(grid)).collect();
    // circulant eigenvalues are the PSD samples themselves
    let eig = psd_on_grid(&procs, noise_floor, grid.points);
    let top = eig.iter().cloned().fold(0.0, f64::max);
    if eig.iter().any(|&l| l < -1e-9 * top.max(1e-300) || !l.is_finite()) {
        return Err(Error::Consistency("frequency covariance is not PSD".to_string()));
    }
    let mut r = circulant_covariance(&frequency_kernel(&procs, grid.points), noise_floor);
    hermitize(&mut r);
    Ok(r)
}

/// `R_A = int f(Omega) a(Omega) a(Omega)^H dOmega`, trace-normalized to the
/// port count. `a` is the per-port sum of both polarization responses.
pub fn dmc_spatial_covariance(mixture: &VmfMixture, array: &ArrayModel, grid: &FrequencyGrid) -> CMat {
    dmc_spatial_covariance_with(mixture, array, grid, &SphereQuadrature::default())
}

pub fn dmc_spatial_covariance_with(
    mixture: &VmfMixture,
    array: &ArrayModel,
    grid: &FrequencyGrid,
    quad: &SphereQuadrature,
) -> CMat {
    let p = array.port_count();
    let mut acc = vec![Complex64::new(0.0, 0.0); p * p];
    let mut a = vec![Complex64::new(0.0, 0.0); p];
    for (dir, w) in quad.dirs.iter().zip(&quad.weights) {
        let dens = mixture.density_at(dir) * w;
        if dens == 0.0 {
            continue;
        }
        array.fill_scalar_response(dir, grid.center_hz, &mut a);
        for j in 0..p {
            let aj = a[j].conj() * dens;
            let col = &mut acc[j * p..(j + 1) * p];
            for i in 0..p {
                col[i] += a[i] * aj;
            }
        }
    }
    let mut r = CMat::from_vec(p, p, acc);
    hermitize(&mut r);
    let tr: f64 = (0..p).map(|i| r[(i, i)].re).sum();
    if tr > 0.0 {
        r *= Complex64::new(p as f64 / tr, 0.0);
    }
    r
}

/// Superposition of specular paths,
/// `H(f) = sum_l F_R alpha_l F_T^T e^{j 2 pi (f - f_c) tau_l}`.
///
/// Array responses are evaluated at the carrier. The carrier phase
/// `e^{j 2 pi f_c tau}` is constant over the band and is carried by `alpha`.
pub fn synth_smc(
    paths: &[SmcPath],
    tx: &Arc<ArrayModel>,
    rx: &Arc<ArrayModel>,
    grid: &FrequencyGrid,
) -> Result<ChannelTensor> {
    grid.validate()?;
    let mut t = ChannelTensor::zeros(tx.clone(), rx.clone(), *grid);
    for p in paths {
        p.validate(grid)?;
        add_path(&mut t, p, 1.0);
    }
    Ok(t)
}

/// Spatial signature `F_R alpha F_T^T` of one path (`M_R x M_T`).
pub fn path_signature(path: &SmcPath, tx: &ArrayModel, rx: &ArrayModel, fc: f64) -> CMat {
    let fr = response_at(rx, path.eoa_deg, path.aoa_deg, fc);
    let ft = response_at(tx, path.eod_deg, path.aod_deg, fc);
    &fr * path.amp_matrix() * ft.transpose()
}

/// Unchecked response matrix for in-range angles in degrees.
pub(crate) fn response_at(array: &ArrayModel, el_deg: f64, az_deg: f64, f: f64) -> CMat {
    let p = array.port_count();
    let mut v = vec![Complex64::new(0.0, 0.0); 2 * p];
    array.fill_response(&unit_vector(deg2rad(el_deg), deg2rad(az_deg)), f, &mut v);
    CMat::from_vec(p, 2, v)
}

/// Per-bin phase ramp `e^{j 2 pi (f_m - f_c) tau}`.
pub fn delay_phases(grid: &FrequencyGrid, tau: f64) -> Vec<Complex64> {
    (0..grid.points)
        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * grid.offset(m) * tau))
        .collect()
}

/// `t += sign * H_S(path)`.
pub(crate) fn add_path(t: &mut ChannelTensor, path: &SmcPath, sign: f64) {
    let s = path_signature(path, t.tx(), t.rx(), t.grid().center_hz);
    let ph = delay_phases(t.grid(), path.delay_s);
    let (mr, mt, mf) = (t.rx_ports(), t.tx_ports(), t.freq_points());
    let data = t.data_mut();
    for r in 0..mr {
        for c in 0..mt {
            let g = s[(r, c)] * sign;
            let base = (r * mt + c) * mf;
            for (d, e) in data[base..base + mf].iter_mut().zip(&ph) {
                *d += g * e;
            }
        }
    }
}

/// Precomputed covariance factors for repeated DMC realizations.
#[derive(Clone, Debug)]
pub struct DmcSynthesizer {
    grid: FrequencyGrid,
    tx: Arc<ArrayModel>,
    rx: Arc<ArrayModel>,
    l_f: CMat,
    l_r: CMat,
    l_t: CMat,
    clipped: bool,
    zero: bool,
}

impl DmcSynthesizer {
    pub fn new(model: &DmcModel, tx: &Arc<ArrayModel>, rx: &Arc<ArrayModel>, grid: &FrequencyGrid) -> Result<Self> {
        model.validate(grid)?;
        let r_f = dmc_frequency_covariance(&model.processes, model.noise_floor, grid)?;
        let r_r = dmc_spatial_covariance(&model.vmf_rx, rx, grid);
        let r_t = dmc_spatial_covariance(&model.vmf_tx, tx, grid);
        Self::from_covariances(&r_f, &r_r, &r_t, tx, rx, grid)
    }

    /// Builds from explicit covariance factors of the Kronecker model.
    pub fn from_covariances(
        r_f: &CMat,
        r_r: &CMat,
        r_t: &CMat,
        tx: &Arc<ArrayModel>,
        rx: &Arc<ArrayModel>,
        grid: &FrequencyGrid,
    ) -> Result<Self> {
        if r_f.nrows() != grid.points || r_r.nrows() != rx.port_count() || r_t.nrows() != tx.port_count() {
            return Err(Error::DimensionMismatch(format!(
                "covariances {}/{}/{} vs grid {} and arrays {}/{}",
                r_f.nrows(),
                r_r.nrows(),
                r_t.nrows(),
                grid.points,
                rx.port_count(),
                tx.port_count()
            )));
        }
        let zero = r_f.iter().all(|v| *v == Complex64::new(0.0, 0.0));
        let (l_f, c1) = psd_factor(r_f);
        let (l_r, c2) = psd_factor(r_r);
        let (l_t, c3) = psd_factor(r_t);
        Ok(Self { grid: *grid, tx: tx.clone(), rx: rx.clone(), l_f, l_r, l_t, clipped: c1 || c2 || c3, zero })
    }

    /// Whether any factor fell back to eigenvalue clipping.
    pub fn clipped(&self) -> bool {
        self.clipped
    }

    /// One realization `L_F z (L_R ⊗ L_T)^T`, reshaped to a tensor.
    pub fn realize(&self, seed: u64) -> ChannelTensor {
        let mut t = ChannelTensor::zeros(self.tx.clone(), self.rx.clone(), self.grid);
        t.metadata.insert(META_SEED.to_string(), format!("{seed}"));
        if self.clipped {
            t.metadata.insert(META_FACTOR_CLIPPED.to_string(), "true".to_string());
        }
        if self.zero {
            return t;
        }
        let (mr, mt, mf) = (t.rx_ports(), t.tx_ports(), t.freq_points());
        let mut rng = seeded(seed);
        let data = t.data_mut();
        for v in data.iter_mut() {
            *v = complex_normal(&mut rng);
        }
        // frequency factor, one link at a time
        let mut y = vec![Complex64::new(0.0, 0.0); mf];
        for link in data.chunks_exact_mut(mf) {
            y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for j in 0..mf {
                let zj = link[j];
                let col = self.l_f.column(j);
                for m in j..mf {
                    y[m] += col[m] * zj;
                }
            }
            link.copy_from_slice(&y);
        }
        // spatial factors, one frequency at a time
        let mut s = CMat::zeros(mr, mt);
        let lt_t = self.l_t.transpose();
        for f in 0..mf {
            for r in 0..mr {
                for c in 0..mt {
                    s[(r, c)] = data[(r * mt + c) * mf + f];
                }
            }
            let o = &self.l_r * &s * &lt_t;
            for r in 0..mr {
                for c in 0..mt {
                    data[(r * mt + c) * mf + f] = o[(r, c)];
                }
            }
        }
        t
    }
}

/// One DMC realization from the Kronecker covariance model.
pub fn synth_dmc(
    model: &DmcModel,
    tx: &Arc<ArrayModel>,
    rx: &Arc<ArrayModel>,
    grid: &FrequencyGrid,
    seed: u64,
) -> Result<ChannelTensor> {
    Ok(DmcSynthesizer::new(model, tx, rx, grid)?.realize(seed))
}

/// `synth_smc + synth_dmc`.
pub fn synth_full(
    paths: &[SmcPath],
    model: &DmcModel,
    tx: &Arc<ArrayModel>,
    rx: &Arc<ArrayModel>,
    grid: &FrequencyGrid,
    seed: u64,
) -> Result<ChannelTensor> {
    let mut d = synth_dmc(model, tx, rx, grid, seed)?;
    let s = synth_smc(paths, tx, rx, grid)?;
    d.accumulate(&s, 1.0)?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_single, build_upa, ElementPattern, Polarization};
    use crate::linalg::frob_sq;

    fn iso() -> Arc<ArrayModel> {
        Arc::new(build_single(Polarization::V, ElementPattern::isotropic()).unwrap())
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn path(delay: f64, a: Complex64) -> SmcPath {
        SmcPath {
            eoa_deg: 0.0,
            aoa_deg: 0.0,
            eod_deg: 0.0,
            aod_deg: 0.0,
            delay_s: delay,
            amp: [[a, c(0.0, 0.0)], [c(0.0, 0.0), a]],
        }
    }

    #[test]
    fn empty_paths_give_zero_tensor() {
        let t = synth_smc(&[], &iso(), &iso(), &FrequencyGrid::sounder(16)).unwrap();
        assert_eq!(t.power(), 0.0);
    }

    #[test]
    fn zero_delay_is_constant() {
        let t = synth_smc(&[path(0.0, c(0.7, -0.2))], &iso(), &iso(), &FrequencyGrid::sounder(16)).unwrap();
        assert!(t.data().iter().all(|v| (v - c(0.7, -0.2)).norm() < 1e-15));
    }

    #[test]
    fn delay_maps_to_transform_bin() {
        let g = FrequencyGrid::sounder(256);
        let t = synth_smc(&[path(100.0 * g.delay_resolution(), c(1.0, 0.0))], &iso(), &iso(), &g).unwrap();
        // brute-force inverse transform
        let h = t.link(0, 0);
        let p: Vec<f64> = (0..256)
            .map(|n| {
                h.iter()
                    .enumerate()
                    .map(|(m, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (m * n) as f64 / 256.0))
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .collect();
        let best = (0..256).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(best, 100);
    }

    #[test]
    fn psd_onset_value_is_half_alpha1() {
        let g = FrequencyGrid::sounder(512);
        let model = DmcModel {
            processes: vec![DmcDelayProcess { alpha1: 2.0, decay: 1e7, base_delay_s: 40.0 * g.delay_resolution() }],
            noise_floor: 0.01,
            ..DmcModel::none()
        };
        let tau_d = 40.0 * g.delay_resolution();
        let v = dmc_delay_psd(&model, &g, &[tau_d, 1e-3, tau_d + 10.0 * g.delay_resolution()]);
        assert!((v[0] - 1.01).abs() < 1e-12);
        assert!((v[1] - 0.01).abs() < 1e-12);
        let expect = 2.0 * (-1e7 * 10.0 * g.delay_resolution()).exp() + 0.01;
        assert!((v[2] - expect).abs() < 1e-9);
    }

    #[test]
    fn kernel_row_inverse_transform_is_psd() {
        let g = FrequencyGrid::sounder(256);
        let procs = [
            NormalizedProcess { alpha1: 1.0, beta: 0.1, onset_bin: 20.3 },
            NormalizedProcess { alpha1: 0.2, beta: 0.03, onset_bin: 90.0 },
        ];
        let mut k = frequency_kernel(&procs, g.points);
        fft::inverse(&mut k);
        let psd = psd_on_grid(&procs, 0.0, g.points);
        for (a, b) in k.iter().zip(&psd) {
            assert!((a.re - b).abs() < 1e-12 * (1.0 + b) && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn continuous_kernel_agrees_at_small_lags() {
        let p = NormalizedProcess { alpha1: 1.0, beta: 0.02, onset_bin: 0.0 };
        let exact = frequency_kernel(&[p], 1024);
        let cont = continuous_kernel(&p, 1024);
        // same order of magnitude and phase near lag 0
        assert!((exact[1].norm() / cont[1].norm() - 1.0).abs() < 0.15);
    }

    #[test]
    fn pure_noise_covariance_is_scaled_identity() {
        let g = FrequencyGrid::sounder(8);
        let r = dmc_frequency_covariance(&[], 0.3, &g).unwrap();
        let id = CMat::identity(8, 8) * c(0.3, 0.0);
        assert!(frob_sq(&(r - id)) < 1e-28);
    }

    #[test]
    fn covariance_diagonal_is_floor_plus_kernel_zero() {
        let g = FrequencyGrid::sounder(64);
        let pr = [DmcDelayProcess { alpha1: 1.0, decay: 2e7, base_delay_s: 5e-9 }];
        let r = dmc_frequency_covariance(&pr, 0.05, &g).unwrap();
        let k0 = frequency_kernel(&[pr[0].normalized(&g)], 64)[0].re;
        for i in 0..64 {
            assert!((r[(i, i)].re - 0.05 - k0).abs() < 1e-14);
        }
    }

    #[test]
    fn spatial_covariance_properties() {
        let g = FrequencyGrid::sounder(4);
        let one = build_single(Polarization::V, ElementPattern::isotropic()).unwrap();
        let r = dmc_spatial_covariance(&VmfMixture::uniform(), &one, &g);
        assert!((r[(0, 0)].re - 1.0).abs() < 1e-12);

        let a = build_upa(2, 2, crate::array::HALF_WAVELENGTH_5G5, ElementPattern::default()).unwrap();
        let r = dmc_spatial_covariance(&VmfMixture::single(10.0, 20.0, 500.0), &a, &g);
        assert!(frob_sq(&(&r - r.adjoint())) < 1e-24);
        let mut ev: Vec<f64> = r.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!(ev[1] < 0.05 * ev[0]);
    }

    #[test]
    fn same_seed_same_tensor() {
        let g = FrequencyGrid::sounder(16);
        let a = Arc::new(build_upa(1, 2, 0.027, ElementPattern::default()).unwrap());
        let m = DmcModel {
            processes: vec![DmcDelayProcess { alpha1: 1.0, decay: 5e7, base_delay_s: 3e-9 }],
            noise_floor: 0.01,
            vmf_rx: VmfMixture::single(0.0, 0.0, 5.0),
            vmf_tx: VmfMixture::uniform(),
        };
        let x = synth_dmc(&m, &a, &a, &g, 42).unwrap();
        let y = synth_dmc(&m, &a, &a, &g, 42).unwrap();
        assert_eq!(x.data(), y.data());
        assert_eq!(x.metadata.get(META_SEED).map(|s| s.as_str()), Some("42"));
        let z = synth_dmc(&m, &a, &a, &g, 43).unwrap();
        assert_ne!(x.data(), z.data());
    }

    #[test]
    fn white_model_variance() {
        let g = FrequencyGrid::sounder(64);
        let a = Arc::new(build_upa(4, 4, 0.027, ElementPattern::isotropic()).unwrap());
        let b = Arc::new(build_upa(4, 4, 0.027, ElementPattern::isotropic()).unwrap());
        // 32 x 32 x 64 = 65536 entries; use two seeds for > 1e5 samples
        let m = DmcModel { noise_floor: 0.5, ..DmcModel::none() };
        let syn = DmcSynthesizer::new(&m, &a, &b, &g).unwrap();
        let mut s = 0.0;
        let mut n = 0usize;
        for seed in 0..2 {
            let t = syn.realize(seed);
            s += t.power();
            n += t.data().len();
        }
        // spatial factors are trace-normalized, so per-entry variance is 0.5 on average
        assert!((s / n as f64 / 0.5 - 1.0).abs() < 0.03);
    }

    #[test]
    fn zero_model_matches_smc_only() {
        let g = FrequencyGrid::sounder(32);
        let a = iso();
        let p = [path(3.0 * g.delay_resolution(), c(0.5, 0.5))];
        let full = synth_full(&p, &DmcModel::none(), &a, &a, &g, 1).unwrap();
        let smc = synth_smc(&p, &a, &a, &g).unwrap();
        assert_eq!(full.data(), smc.data());
    }

    #[test]
    fn invalid_paths_rejected() {
        let g = FrequencyGrid::sounder(32);
        let mut p = path(g.delay_span(), c(1.0, 0.0));
        assert!(synth_smc(&[p], &iso(), &iso(), &g).is_err());
        p.delay_s = 0.0;
        p.amp[0][0] = c(f64::NAN, 0.0);
        assert!(synth_smc(&[p], &iso(), &iso(), &g).is_err());
    }
}
