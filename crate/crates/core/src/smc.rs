//! Specular path estimation by successive interference cancellation with
//! coordinate-wise ML refinement, plus the DMC residual and its measured
//! covariances.

use alloc::format;
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
use crate::linalg::CMat;
use crate::math::{deg2rad, golden_max, unit_vector, wrap_deg};
use crate::synth::{add_path, SmcPath};
use crate::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageConfig {
    pub max_paths: usize,
    /// Coarse angular grid step (both elevation and azimuth).
    pub angle_step_deg: f64,
    /// Zero-padding factor of the coarse delay search (1 = one-bin steps).
    pub delay_oversampling: usize,
    /// Maximum coordinate-refinement cycles per path.
    pub refine_iterations: usize,
    /// Re-estimation sweeps over all paths after extraction.
    pub sage_sweeps: usize,
    /// Stop when a candidate's power drops below the first path by this much.
    pub stop_db: f64,
    /// Relative energy change that ends a refinement cycle.
    pub epsilon: f64,
    pub angle_tolerance_deg: f64,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            max_paths: 50,
            angle_step_deg: 2.0,
            delay_oversampling: 1,
            refine_iterations: 8,
            sage_sweeps: 2,
            stop_db: -20.0,
            epsilon: 1e-9,
            angle_tolerance_deg: 0.01,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_paths == 0 {
            return Err(invalid!("max_paths must be >= 1"));
        }
        if !(self.stop_db <= 0.0) {
            return Err(invalid!("stop threshold must be <= 0 dB"));
        }
        if !(self.angle_step_deg > 0.0 && self.angle_step_deg <= 45.0) {
            return Err(invalid!("angle step must be in (0, 45] deg"));
        }
        if self.delay_oversampling == 0 {
            return Err(invalid!("delay oversampling must be >= 1"));
        }
        if !(self.epsilon > 0.0) || !(self.angle_tolerance_deg > 0.0) {
            return Err(invalid!("tolerances must be positive"));
        }
        Ok(())
    }
}

type M2 = [[Complex64; 2]; 2];

fn inv2_ridge(g: &M2) -> M2 {
    let tr = g[0][0].re + g[1][1].re;
    let mut a = *g;
    let mut det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.norm() <= 1e-10 * tr * tr {
        let r = 1e-9 * tr.max(1e-300);
        a[0][0] += r;
        a[1][1] += r;
        det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    }
    let d = Complex64::new(1.0, 0.0) / det;
    [[a[1][1] * d, -a[0][1] * d], [-a[1][0] * d, a[0][0] * d]]
}

fn mul2(a: &M2, b: &M2) -> M2 {
    let mut o = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

/// `F^H F` for a column-major `ports x 2` response.
fn gram(f: &[Complex64]) -> M2 {
    let p = f.len() / 2;
    let mut g = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            g[i][j] = (0..p).map(|k| f[i * p + k].conj() * f[j * p + k]).sum();
        }
    }
    g
}

/// LS amplitudes and captured energy for `C = F_R^H Y conj(F_T)`.
fn solve_amp(c: &M2, gr_inv: &M2, gt_inv: &M2) -> (M2, f64) {
    let a = mul2(&mul2(gr_inv, c), gt_inv);
    let mut e = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            e += (a[i][j].conj() * c[i][j]).re;
        }
    }
    (a, e)
}

/// Gram of `conj(F_T)`: `F_T^T conj(F_T)`.
fn gram_t(f: &[Complex64]) -> M2 {
    let g = gram(f);
    [[g[0][0].conj(), g[0][1].conj()], [g[1][0].conj(), g[1][1].conj()]]
}

struct AngleTable {
    angles: Vec<(f64, f64)>,
    ports: usize,
    resp: Vec<Complex64>,
}

impl AngleTable {
    fn new(array: &ArrayModel, fc: f64, step: f64) -> Self {
        let ports = array.port_count();
        let n_el = (180.0 / step).floor() as usize + 1;
        let n_az = (360.0 / step).ceil() as usize;
        let mut angles = Vec::with_capacity(n_el * n_az);
        for i in 0..n_el {
            let el = (-90.0 + i as f64 * step).min(90.0);
            for j in 0..n_az {
                angles.push((el, -180.0 + j as f64 * step));
            }
        }
        let mut resp = vec![ZERO; angles.len() * 2 * ports];
        for (k, (el, az)) in angles.iter().enumerate() {
            let f = &mut resp[k * 2 * ports..(k + 1) * 2 * ports];
            array.fill_response(&unit_vector(deg2rad(*el), deg2rad(*az)), fc, f);
        }
        Self { angles, ports, resp }
    }

    fn response(&self, k: usize) -> &[Complex64] {
        &self.resp[k * 2 * self.ports..(k + 1) * 2 * self.ports]
    }
}

#[derive(Clone, Copy, Debug)]
struct Params {
    tau: f64,
    el_r: f64,
    az_r: f64,
    el_t: f64,
    az_t: f64,
}

/// Reusable estimator holding precomputed coarse-grid steering tables.
pub struct SageEstimator {
    cfg: SageConfig,
    tx: alloc::sync::Arc<ArrayModel>,
    rx: alloc::sync::Arc<ArrayModel>,
    grid: FrequencyGrid,
    table_r: AngleTable,
    table_t: AngleTable,
}

impl SageEstimator {
    pub fn new(
        tx: &alloc::sync::Arc<ArrayModel>,
        rx: &alloc::sync::Arc<ArrayModel>,
        grid: &FrequencyGrid,
        cfg: SageConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        grid.validate()?;
        Ok(Self {
            table_r: AngleTable::new(rx, grid.center_hz, cfg.angle_step_deg),
            table_t: AngleTable::new(tx, grid.center_hz, cfg.angle_step_deg),
            cfg,
            tx: tx.clone(),
            rx: rx.clone(),
            grid: *grid,
        })
    }

    pub fn estimate(&self, h: &ChannelTensor) -> Result<Vec<SmcPath>> {
        if h.grid() != &self.grid
            || h.rx_ports() != self.rx.port_count()
            || h.tx_ports() != self.tx.port_count()
        {
            return Err(Error::DimensionMismatch(format!(
                "tensor {}x{}x{} does not match the estimator geometry",
                h.rx_ports(),
                h.tx_ports(),
                h.freq_points()
            )));
        }
        if !h.is_finite() {
            return Err(invalid!("tensor contains non-finite values"));
        }
        let mut residual = h.clone();
        let mut paths: Vec<SmcPath> = Vec::new();
        let mut params: Vec<Params> = Vec::new();
        if residual.power() == 0.0 {
            return Ok(paths);
        }
        let floor = 10f64.powf(self.cfg.stop_db / 10.0);
        let mut first = 0.0;
        while paths.len() < self.cfg.max_paths {
            let p0 = self.coarse(&residual);
            let p = self.refine(&residual, p0, 2.0 * self.cfg.angle_step_deg, 1.0);
            let path = self.amplitudes(&residual, &p);
            let pw = path.power();
            if !(pw > 0.0) {
                break;
            }
            if paths.is_empty() {
                first = pw;
            } else if pw < first * floor {
                break;
            }
            add_path(&mut residual, &path, -1.0);
            paths.push(path);
            params.push(p);
        }
        for _ in 0..self.cfg.sage_sweeps {
            for l in 0..paths.len() {
                add_path(&mut residual, &paths[l], 1.0);
                let p = self.refine(&residual, params[l], 0.5 * self.cfg.angle_step_deg, 0.5);
                let path = self.amplitudes(&residual, &p);
                add_path(&mut residual, &path, -1.0);
                paths[l] = path;
                params[l] = p;
            }
        }
        paths.sort_by(|a, b| b.power().total_cmp(&a.power()));
        // SAGE updates can push a weak path under the threshold
        if let Some(top) = paths.first().map(|p| p.power()) {
            paths.retain(|p| p.power() >= top * floor);
        }
        Ok(paths)
    }

    /// Coarse delay (FFT power sum), then Rx and Tx grid searches.
    fn coarse(&self, x: &ChannelTensor) -> Params {
        let mf = x.freq_points();
        let n = mf * self.cfg.delay_oversampling;
        let mut power = vec![0.0; n];
        let mut buf = vec![ZERO; n];
        for link in x.data().chunks_exact(mf) {
            buf.iter_mut().for_each(|v| *v = ZERO);
            buf[..mf].copy_from_slice(link);
            fft::forward(&mut buf);
            for (p, v) in power.iter_mut().zip(&buf) {
                *p += v.norm_sqr();
            }
        }
        let mut best = 0;
        for i in 1..n {
            if power[i] > power[best] {
                best = i;
            }
        }
        let tau = best as f64 * self.grid.delay_resolution() / self.cfg.delay_oversampling as f64;
        let y = delay_matched(x, tau);
        let (mr, mt) = (x.rx_ports(), x.tx_ports());

        // Classical beamformer power keeps the element gain in the score, so
        // the search cannot settle on the mirror image behind a planar array.
        // The ML projection takes over during refinement.
        let mut u = vec![ZERO; 2 * mt];
        let mut best_r = (f64::NEG_INFINITY, 0usize);
        for k in 0..self.table_r.angles.len() {
            project_rx(self.table_r.response(k), &y, mr, mt, &mut u);
            let e: f64 = u.iter().map(|v| v.norm_sqr()).sum();
            if e > best_r.0 {
                best_r = (e, k);
            }
        }
        project_rx(self.table_r.response(best_r.1), &y, mr, mt, &mut u);
        let mut best_t = (f64::NEG_INFINITY, 0usize);
        for k in 0..self.table_t.angles.len() {
            let c = project_tx(&u, self.table_t.response(k), mt);
            let e: f64 = c.iter().flatten().map(|v| v.norm_sqr()).sum();
            if e > best_t.0 {
                best_t = (e, k);
            }
        }
        let (el_r, az_r) = self.table_r.angles[best_r.1];
        let (el_t, az_t) = self.table_t.angles[best_t.1];
        Params { tau, el_r, az_r, el_t, az_t }
    }

    /// Cyclic golden-section refinement of delay and the four angles.
    fn refine(&self, x: &ChannelTensor, start: Params, angle_span: f64, delay_span_bins: f64) -> Params {
        let mut p = start;
        let dt = self.grid.delay_resolution();
        let tol_a = self.cfg.angle_tolerance_deg;
        let mut last = self.energy_at(x, &p);
        let mut span = angle_span;
        for _ in 0..self.cfg.refine_iterations {
            // delay, with angle-compressed per-frequency 2x2 blocks
            let d = self.compress(x, &p);
            let (fr, ft) = self.responses(&p);
            let (gr, gt) = (inv2_ridge(&gram(&fr)), inv2_ridge(&gram_t(&ft)));
            let (tau, _) = golden_max(
                |tau| energy_from_blocks(&d, &self.grid, tau, &gr, &gt),
                p.tau - delay_span_bins * dt,
                p.tau + delay_span_bins * dt,
                dt * 1e-4,
            );
            let period = self.grid.delay_span();
            p.tau = ((tau % period) + period) % period;
            let y = delay_matched(x, p.tau);
            let ev = |q: &Params| self.energy_y(&y, q);
            p.el_r = golden_max(|v| ev(&Params { el_r: v.clamp(-90.0, 90.0), ..p }), p.el_r - span, p.el_r + span, tol_a)
                .0
                .clamp(-90.0, 90.0);
            p.az_r = wrap_deg(golden_max(|v| ev(&Params { az_r: v, ..p }), p.az_r - span, p.az_r + span, tol_a).0);
            p.el_t = golden_max(|v| ev(&Params { el_t: v.clamp(-90.0, 90.0), ..p }), p.el_t - span, p.el_t + span, tol_a)
                .0
                .clamp(-90.0, 90.0);
            p.az_t = wrap_deg(golden_max(|v| ev(&Params { az_t: v, ..p }), p.az_t - span, p.az_t + span, tol_a).0);
            let e = ev(&p);
            let done = (e - last).abs() <= self.cfg.epsilon * e.abs();
            last = e;
            span = (span * 0.5).max(4.0 * tol_a);
            if done {
                break;
            }
        }
        p
    }

    fn responses(&self, p: &Params) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut fr = vec![ZERO; 2 * self.rx.port_count()];
        let mut ft = vec![ZERO; 2 * self.tx.port_count()];
        let fc = self.grid.center_hz;
        self.rx.fill_response(&unit_vector(deg2rad(p.el_r), deg2rad(p.az_r)), fc, &mut fr);
        self.tx.fill_response(&unit_vector(deg2rad(p.el_t), deg2rad(p.az_t)), fc, &mut ft);
        (fr, ft)
    }

    fn energy_y(&self, y: &[Complex64], p: &Params) -> f64 {
        let (mr, mt) = (self.rx.port_count(), self.tx.port_count());
        let (fr, ft) = self.responses(p);
        let mut u = vec![ZERO; 2 * mt];
        project_rx(&fr, y, mr, mt, &mut u);
        let c = project_tx(&u, &ft, mt);
        solve_amp(&c, &inv2_ridge(&gram(&fr)), &inv2_ridge(&gram_t(&ft))).1
    }

    fn energy_at(&self, x: &ChannelTensor, p: &Params) -> f64 {
        self.energy_y(&delay_matched(x, p.tau), p)
    }

    /// `D(m) = F_R^H X(m) conj(F_T)` for every frequency.
    fn compress(&self, x: &ChannelTensor, p: &Params) -> Vec<M2> {
        let (mr, mt, mf) = (x.rx_ports(), x.tx_ports(), x.freq_points());
        let (fr, ft) = self.responses(p);
        let mut w = vec![[ZERO; 2]; mr * mf];
        for r in 0..mr {
            for t in 0..mt {
                let (a, b) = (ft[t].conj(), ft[mt + t].conj());
                let link = x.link(r, t);
                let row = &mut w[r * mf..(r + 1) * mf];
                for (o, v) in row.iter_mut().zip(link) {
                    o[0] += v * a;
                    o[1] += v * b;
                }
            }
        }
        let mut d = vec![[[ZERO; 2]; 2]; mf];
        for r in 0..mr {
            let (a, b) = (fr[r].conj(), fr[mr + r].conj());
            for m in 0..mf {
                let v = w[r * mf + m];
                d[m][0][0] += a * v[0];
                d[m][0][1] += a * v[1];
                d[m][1][0] += b * v[0];
                d[m][1][1] += b * v[1];
            }
        }
        d
    }

    fn amplitudes(&self, x: &ChannelTensor, p: &Params) -> SmcPath {
        let (mr, mt) = (x.rx_ports(), x.tx_ports());
        let y = delay_matched(x, p.tau);
        let (fr, ft) = self.responses(p);
        let mut u = vec![ZERO; 2 * mt];
        project_rx(&fr, &y, mr, mt, &mut u);
        let c = project_tx(&u, &ft, mt);
        let (a, _) = solve_amp(&c, &inv2_ridge(&gram(&fr)), &inv2_ridge(&gram_t(&ft)));
        let s = 1.0 / x.freq_points() as f64;
        SmcPath {
            eoa_deg: p.el_r,
            aoa_deg: p.az_r,
            eod_deg: p.el_t,
            aod_deg: p.az_t,
            delay_s: p.tau,
            amp: [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]],
        }
    }
}

fn energy_from_blocks(d: &[M2], grid: &FrequencyGrid, tau: f64, gr_inv: &M2, gt_inv: &M2) -> f64 {
    let mut c = [[ZERO; 2]; 2];
    for (m, blk) in d.iter().enumerate() {
        let e = Complex64::from_polar(1.0, -2.0 * PI * grid.offset(m) * tau);
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += blk[i][j] * e;
            }
        }
    }
    solve_amp(&c, gr_inv, gt_inv).1
}

/// `Y(tau) = sum_m X(m) e^{-j 2 pi (f_m - f_c) tau}`, row-major `M_R x M_T`.
fn delay_matched(x: &ChannelTensor, tau: f64) -> Vec<Complex64> {
    let ph: Vec<Complex64> = (0..x.freq_points())
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * x.grid().offset(m) * tau))
        .collect();
    x.data()
        .chunks_exact(x.freq_points())
        .map(|link| link.iter().zip(&ph).map(|(a, b)| a * b).sum())
        .collect()
}

/// `U = F^H Y` (`2 x M_T`, row-major).
fn project_rx(f: &[Complex64], y: &[Complex64], mr: usize, mt: usize, u: &mut [Complex64]) {
    u.iter_mut().for_each(|v| *v = ZERO);
    for r in 0..mr {
        let (a, b) = (f[r].conj(), f[mr + r].conj());
        let row = &y[r * mt..(r + 1) * mt];
        for t in 0..mt {
            u[t] += a * row[t];
            u[mt + t] += b * row[t];
        }
    }
}

/// `C = U conj(F_T)`.
fn project_tx(u: &[Complex64], ft: &[Complex64], mt: usize) -> M2 {
    let mut c = [[ZERO; 2]; 2];
    for t in 0..mt {
        let (a, b) = (ft[t].conj(), ft[mt + t].conj());
        for i in 0..2 {
            c[i][0] += u[i * mt + t] * a;
            c[i][1] += u[i * mt + t] * b;
        }
    }
    c
}

/// Specular paths of `h`, strongest first.
pub fn estimate_smc(h: &ChannelTensor, config: &SageConfig) -> Result<Vec<SmcPath>> {
    SageEstimator::new(h.tx(), h.rx(), h.grid(), *config)?.estimate(h)
}

/// `H - H_S(paths)`.
pub fn smc_residual(h: &ChannelTensor, paths: &[SmcPath]) -> Result<ChannelTensor> {
    let mut r = h.clone();
    for p in paths {
        p.validate(h.grid())?;
        add_path(&mut r, p, -1.0);
    }
    Ok(r)
}

/// Reconstruction `H_S(paths)` on the geometry of `h`.
pub fn smc_reconstruction(h: &ChannelTensor, paths: &[SmcPath]) -> Result<ChannelTensor> {
    crate::synth::synth_smc(paths, h.tx(), h.rx(), h.grid())
}

/// `vec(H)` with frequency slowest, then Rx, then Tx:
/// index `f * M_R * M_T + r * M_T + t`. This matches the Kronecker order
/// `R_F ⊗ R_R ⊗ R_T`.
pub fn vectorize(h: &ChannelTensor) -> Vec<Complex64> {
    let (mr, mt, mf) = (h.rx_ports(), h.tx_ports(), h.freq_points());
    let mut v = vec![ZERO; mr * mt * mf];
    for r in 0..mr {
        for t in 0..mt {
            for (f, x) in h.link(r, t).iter().enumerate() {
                v[f * mr * mt + r * mt + t] = *x;
            }
        }
    }
    v
}

/// Full outer product `vec(H) vec(H)^H`. Only for small tensors.
pub fn measured_dmc_covariance(h: &ChannelTensor, max_dim: usize) -> Result<CMat> {
    let v = vectorize(h);
    if v.len() > max_dim {
        return Err(invalid!("covariance dimension {} exceeds limit {max_dim}", v.len()));
    }
    let n = v.len();
    Ok(CMat::from_fn(n, n, |i, j| v[i] * v[j].conj()))
}

/// Frequency marginal `(1 / (M_R M_T)) sum_links h h^H` (`M_f x M_f`).
pub fn frequency_marginal(h: &ChannelTensor) -> CMat {
    let mf = h.freq_points();
    let mut acc = vec![ZERO; mf * mf];
    for link in h.data().chunks_exact(mf) {
        for j in 0..mf {
            let c = link[j].conj();
            let col = &mut acc[j * mf..(j + 1) * mf];
            for i in 0..mf {
                col[i] += link[i] * c;
            }
        }
    }
    let s = 1.0 / h.links() as f64;
    CMat::from_vec(mf, mf, acc.into_iter().map(|v| v * s).collect())
}

/// Rx spatial marginal `(1 / (M_f M_T)) sum_{f,t} h_{:,t,f} h_{:,t,f}^H`.
pub fn rx_spatial_marginal(h: &ChannelTensor) -> CMat {
    let (mr, mt, mf) = (h.rx_ports(), h.tx_ports(), h.freq_points());
    let mut s = CMat::zeros(mr, mr);
    for i in 0..mr {
        for j in i..mr {
            let mut acc = ZERO;
            for t in 0..mt {
                acc += h.link(i, t).iter().zip(h.link(j, t)).map(|(a, b)| a * b.conj()).sum::<Complex64>();
            }
            s[(i, j)] = acc / (mf * mt) as f64;
            s[(j, i)] = s[(i, j)].conj();
        }
    }
    s
}

/// Tx spatial marginal `(1 / (M_f M_R)) sum_{f,r} h_{r,:,f} h_{r,:,f}^H`.
pub fn tx_spatial_marginal(h: &ChannelTensor) -> CMat {
    let (mr, mt, mf) = (h.rx_ports(), h.tx_ports(), h.freq_points());
    let mut s = CMat::zeros(mt, mt);
    for i in 0..mt {
        for j in i..mt {
            let mut acc = ZERO;
            for r in 0..mr {
                acc += h.link(r, i).iter().zip(h.link(r, j)).map(|(a, b)| a * b.conj()).sum::<Complex64>();
            }
            s[(i, j)] = acc / (mf * mr) as f64;
            s[(j, i)] = s[(i, j)].conj();
        }
    }
    s
}

/// Periodogram of the frequency marginal in the circulant eigenbasis,
/// `P_n = v_n^H R v_n` with `v_n[m] = e^{j 2 pi m n / M} / sqrt(M)`,
/// computed from per-link transforms without forming `R`.
pub fn delay_periodogram(h: &ChannelTensor) -> Vec<f64> {
    let mf = h.freq_points();
    let mut p = vec![0.0; mf];
    let mut buf = vec![ZERO; mf];
    for link in h.data().chunks_exact(mf) {
        buf.copy_from_slice(link);
        fft::forward(&mut buf);
        for (a, v) in p.iter_mut().zip(&buf) {
            *a += v.norm_sqr();
        }
    }
    let s = 1.0 / (mf * h.links()) as f64;
    p.iter_mut().for_each(|v| *v *= s);
    p
}

/// Same quantity as [`delay_periodogram`] from an explicit frequency
/// covariance, via its circular diagonal sums.
pub fn periodogram_from_covariance(r: &CMat) -> Vec<f64> {
    let m = r.nrows();
    let mut s = vec![ZERO; m];
    for j in 0..m {
        for i in 0..m {
            s[(i + m - j) % m] += r[(i, j)];
        }
    }
    fft::forward(&mut s);
    s.iter().map(|v| v.re / m as f64).collect()
}

/// Angles wrapped into range for a path built from arbitrary values.
pub fn wrap_path_angles(p: &mut SmcPath) {
    p.eoa_deg = p.eoa_deg.clamp(-90.0, 90.0);
    p.eod_deg = p.eod_deg.clamp(-90.0, 90.0);
    p.aoa_deg = wrap_deg(p.aoa_deg);
    p.aod_deg = wrap_deg(p.aod_deg);
}
