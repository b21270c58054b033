//! Seeded random scenarios: specular paths and a DMC model per position.
//!
//! Departure angles are expressed in the Tx array frame (azimuth measured
//! from `transmitter.boresight_azimuth_deg`). Each Rx array is assumed to
//! face the transmitter horizontally, so a LOS path arrives at azimuth 0.

use std::sync::Arc;

use chanest_core::array::ArrayModel;
use chanest_core::math::{rad2deg, wrap_deg};
use chanest_core::rng::{child_seed, seeded_stream, uniform, SeededRng};
use chanest_core::synth::{psd_on_grid, synth_full, synth_smc, DmcDelayProcess, DmcModel, SmcPath};
use chanest_core::vmf::VmfMixture;
use chanest_core::{ChannelTensor, Complex64, SPEED_OF_LIGHT};
use serde::{Deserialize, Serialize};

use crate::config::{CampaignConfig, PositionConfig};
use crate::error::{AppError, AppResult};

/// Planted truth of one position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionTruth {
    pub id: String,
    /// Seed of the DMC realization.
    pub seed: u64,
    pub distance_m: f64,
    pub los: bool,
    pub paths: Vec<SmcPath>,
    pub dmc: DmcModel,
}

fn draw(rng: &mut SeededRng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * uniform(rng)
}

fn draw_count(rng: &mut SeededRng, r: [usize; 2]) -> usize {
    (r[0] + (uniform(rng) * (r[1] - r[0] + 1) as f64) as usize).min(r[1])
}

fn direction(v: [f64; 3]) -> (f64, f64) {
    let h = v[0].hypot(v[1]);
    (rad2deg(v[2].atan2(h)), wrap_deg(rad2deg(v[1].atan2(v[0]))))
}

/// Draws the truth of position `index`. The stream depends only on the
/// campaign seed and the index.
pub fn generate(
    cfg: &CampaignConfig,
    index: usize,
    pos: &PositionConfig,
    los: bool,
    tx: &Arc<ArrayModel>,
    rx: &Arc<ArrayModel>,
) -> AppResult<PositionTruth> {
    let s = &cfg.scenario;
    let g = &cfg.grid;
    let mut rng = seeded_stream(cfg.seed, index as u64);
    let seed = child_seed(&mut rng);
    let d = cfg.distance(pos);
    let t = cfg.transmitter.position;
    let v = [pos.position[0] - t[0], pos.position[1] - t[1], pos.position[2] - t[2]];
    // Tx angles are relative to its boresight; the Rx array faces the Tx
    let (el_d, az_d) = direction(v);
    let az_d = wrap_deg(az_d - cfg.transmitter.boresight_azimuth_deg);
    let (el_a, _) = direction([-v[0], -v[1], -v[2]]);
    let az_a = 0.0;

    let exponent = if los { s.los_exponent } else { s.nlos_exponent };
    let shadow = s.shadowing_db * (2.0 * uniform(&mut rng) - 1.0);
    let mut pl = cfg.intercept_db() + 10.0 * exponent * d.max(1.0).log10() + shadow;
    if !los {
        pl += s.nlos_first_path_db;
    }
    let n = draw_count(&mut rng, s.smc_paths);
    let tau0 = d / SPEED_OF_LIGHT;
    let mut paths = Vec::with_capacity(n);
    for k in 0..n {
        let (power_db, delay, eoa, aoa, eod, aod) = if k == 0 {
            if los {
                (-pl, tau0, el_a, az_a, el_d, az_d)
            } else {
                let extra = draw(&mut rng, [0.0, s.excess_delay_ns[0]]) * 1e-9;
                (
                    -pl,
                    tau0 + extra,
                    draw(&mut rng, s.elevation_deg),
                    draw(&mut rng, [-180.0, 180.0]),
                    draw(&mut rng, s.elevation_deg),
                    draw(&mut rng, s.tx_azimuth_deg),
                )
            }
        } else {
            (
                -pl + draw(&mut rng, s.relative_power_db),
                tau0 + draw(&mut rng, s.excess_delay_ns) * 1e-9,
                draw(&mut rng, s.elevation_deg),
                draw(&mut rng, [-180.0, 180.0]),
                draw(&mut rng, s.elevation_deg),
                draw(&mut rng, s.tx_azimuth_deg),
            )
        };
        let xpr = draw(&mut rng, s.xpr_db);
        let co = (10f64.powf(power_db / 10.0) / 2.0).sqrt();
        let cross = co * 10f64.powf(-xpr / 20.0);
        let mut phase = || Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * uniform(&mut rng));
        let amp = [[phase() * co, phase() * cross], [phase() * cross, phase() * co]];
        paths.push(SmcPath {
            eoa_deg: eoa,
            aoa_deg: wrap_deg(aoa),
            eod_deg: eod,
            aod_deg: wrap_deg(aod),
            delay_s: delay,
            amp,
        });
    }
    paths.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));

    let hs = synth_smc(&paths, tx, rx, g).map_err(|e| AppError::core(format!("position {}", pos.id), e))?;
    let p_smc = hs.power() / hs.data().len() as f64;
    let k = draw_count(&mut rng, s.dmc_processes);
    let frac = draw(&mut rng, s.dmc_power_fraction);
    let mut processes = Vec::with_capacity(k);
    for i in 0..k {
        let onset = if i < paths.len() { paths[i].delay_s } else { tau0 + draw(&mut rng, s.excess_delay_ns) * 1e-9 };
        processes.push(DmcDelayProcess {
            alpha1: draw(&mut rng, [0.3, 1.0]),
            decay: draw(&mut rng, s.dmc_decay_db_per_ns) * std::f64::consts::LN_10 / 10.0 * 1e9,
            base_delay_s: onset,
        });
    }
    let mut dmc = DmcModel {
        processes,
        noise_floor: 0.0,
        vmf_rx: VmfMixture::single(paths[0].eoa_deg, paths[0].aoa_deg, draw(&mut rng, s.dmc_concentration)),
        vmf_tx: VmfMixture::single(paths[0].eod_deg, paths[0].aod_deg, draw(&mut rng, s.dmc_concentration)),
    };
    // scale the processes to the drawn power share
    let unit = psd_on_grid(&dmc.normalized(g), 0.0, g.points).iter().sum::<f64>() / g.points as f64;
    let p_dmc = if unit > 0.0 { frac / (1.0 - frac) * p_smc } else { 0.0 };
    if unit > 0.0 {
        for p in &mut dmc.processes {
            p.alpha1 *= p_dmc / unit;
        }
    }
    dmc.noise_floor = (p_smc + p_dmc) * 10f64.powf(-s.snr_db / 10.0);
    Ok(PositionTruth { id: pos.id.clone(), seed, distance_m: d, los, paths, dmc })
}

/// Channel tensor of a drawn truth, tagged with the position metadata.
pub fn realize(truth: &PositionTruth, tx: &Arc<ArrayModel>, rx: &Arc<ArrayModel>, cfg: &CampaignConfig) -> AppResult<ChannelTensor> {
    let mut h = synth_full(&truth.paths, &truth.dmc, tx, rx, &cfg.grid, truth.seed)
        .map_err(|e| AppError::core(format!("position {}", truth.id), e))?;
    h.metadata.insert("position".into(), truth.id.clone());
    h.metadata.insert("los".into(), truth.los.to_string());
    h.metadata.insert("distance_m".into(), truth.distance_m.to_string());
    Ok(h)
}
