//! Channel characterization and report emission.
//!
//! Files under `report/`:
//!
//! ```text
//! records.csv             per-position PL, DS, ED, KF, angular spreads, XPR/CPR
//! pathloss.csv            {n, beta, sigma} x {CI, FI} per scenario
//! lsp_fits.csv            DS/ED/KF/AS distribution fits per scenario
//! polarization_fits.csv   XPR/CPR distribution fits per scenario
//! sv_profiles.csv         mean singular values of the normalized channels
//! capacity.csv            full, SMC-only and SMC+DMC capacities
//! dmc_fractions.csv       DMC power fraction and capture ratio
//! plots/psd_<id>.csv      delay PSD and fitted DMC model
//! plots/cdf_<p>_<s>.csv   empirical CDFs of each parameter
//! plots/spectrum_<id>_rx.csv  Rx Bartlett spectrum
//! manifest.json           written last
//! ```

use chanest_core::array::Polarization;
use chanest_core::mimo::{bartlett_spectrum, capacity_report, dmc_power_fraction, AngleGrid, BartlettMode, Side};
use chanest_core::rng::{child_seed, seeded_stream};
use chanest_core::smc::smc_reconstruction;
use chanest_core::stats::{
    delay_psd, delay_spread, excess_delay, estimate_noise_floor_db, extract_mpcs, filter_min_distance, fit_lsp_distribution,
    fit_pathloss, kfactor_moment, path_angular_spreads, path_loss_db, polarization_links, xpr_cpr_from_tensor, LspFit,
    LspTransform, PathLossFit, PathLossModel, StatRecord,
};
use chanest_core::synth::{psd_on_grid, synth_dmc, DmcModel};
use chanest_core::vmf::VmfMixture;
use chanest_core::ChannelTensor;
use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;
use crate::container::read_container;
use crate::error::{AppError, AppResult};
use crate::io::{csv_bytes, csv_table, read_json, write_atomic, write_json};
use crate::pipeline::{run_pool, Layout, PositionEstimate, MANIFEST};

/// Everything derived from one position.
#[derive(Clone, Debug)]
struct PositionReport {
    record: StatRecord,
    psd: Vec<f64>,
    dmc_model: Option<Vec<f64>>,
    delay_ns: Vec<f64>,
    capacity: Vec<CapacityRow>,
    sv: Vec<SvRow>,
    dmc: DmcRow,
    spectrum: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
struct CapacityRow {
    position: String,
    los: bool,
    snr_db: f64,
    full: f64,
    smc: f64,
    smc_dmc: f64,
    smc_rel_err: f64,
    smc_dmc_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
struct SvRow {
    position: String,
    channel: &'static str,
    index: usize,
    sigma: f64,
}

#[derive(Clone, Debug, Serialize)]
struct DmcRow {
    position: String,
    los: bool,
    dmc_power_fraction: f64,
    capture_ratio: f64,
    processes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossRow {
    pub scenario: String,
    pub count: usize,
    #[serde(rename = "CI_n")]
    pub ci_n: f64,
    #[serde(rename = "CI_beta")]
    pub ci_beta: f64,
    #[serde(rename = "CI_sigma")]
    pub ci_sigma: f64,
    #[serde(rename = "FI_n")]
    pub fi_n: f64,
    #[serde(rename = "FI_beta")]
    pub fi_beta: f64,
    #[serde(rename = "FI_sigma")]
    pub fi_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LspRow {
    pub scenario: String,
    pub parameter: String,
    pub transform: LspTransform,
    pub count: usize,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub positions: Vec<String>,
    /// Paths relative to `report/`.
    pub files: Vec<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn analyze(
    cfg: &CampaignConfig,
    index: usize,
    los: bool,
    distance: f64,
    est: &PositionEstimate,
    h: &ChannelTensor,
) -> AppResult<PositionReport> {
    let id = est.id.as_str();
    let core = |stage: &str| {
        let ctx = format!("{id}: {stage}");
        move |e| AppError::core(ctx, e)
    };
    let g = h.grid();
    let psd = delay_psd(h, None).map_err(core("delay PSD"))?;
    let floor_db = estimate_noise_floor_db(&psd).map_err(core("noise floor"))?;
    let mpcs = extract_mpcs(&psd, floor_db, g.delay_resolution()).mpcs;
    let pl_db = path_loss_db(&mpcs).unwrap_or(f64::NAN);
    let ed_s = excess_delay(&mpcs).unwrap_or(f64::NAN);
    let ds_s = delay_spread(&mpcs).unwrap_or(f64::NAN);
    let co: Vec<(usize, usize)> = [Polarization::V, Polarization::H]
        .iter()
        .flat_map(|p| polarization_links(h, *p, *p))
        .collect();
    let kf_db = median(co.iter().filter_map(|&(r, t)| kfactor_moment(h.link(r, t)).ok()).map(|k| k.db).collect());
    let spreads = path_angular_spreads(&est.paths).ok();
    let pol = xpr_cpr_from_tensor(h).map_err(core("polarization ratios"))?;
    let pick = |f: fn(&chanest_core::stats::AngularSpreads) -> f64| spreads.as_ref().map_or(f64::NAN, f);
    let record = StatRecord {
        position: id.to_string(),
        distance_3d_m: distance,
        los,
        pl_db,
        ds_s,
        ed_s,
        kf_db,
        asd_deg: pick(|s| s.asd),
        asa_deg: pick(|s| s.asa),
        esd_deg: pick(|s| s.esd),
        esa_deg: pick(|s| s.esa),
        xpr_h_db: pol.xpr_h_db,
        xpr_v_db: pol.xpr_v_db,
        cpr_db: pol.cpr_db,
    };

    let m = g.points as f64;
    let dmc_model = est.dmc.as_ref().map(|d| {
        // periodogram scale is M_f times the delay PSD scale
        psd_on_grid(&d.normalized(g), d.noise_floor, g.points).iter().map(|v| v / m).collect()
    });

    let h_smc = smc_reconstruction(h, &est.paths).map_err(core("SMC reconstruction"))?;
    let h_both = match &est.dmc {
        Some(d) => {
            let model = DmcModel {
                processes: d.processes.clone(),
                noise_floor: d.noise_floor,
                vmf_rx: est.angular_rx.as_ref().map_or_else(VmfMixture::uniform, |a| a.mixture.clone()),
                vmf_tx: est.angular_tx.as_ref().map_or_else(VmfMixture::uniform, |a| a.mixture.clone()),
            };
            let seed = child_seed(&mut seeded_stream(cfg.seed, (1 << 32) | index as u64));
            let mut t = synth_dmc(&model, h.tx(), h.rx(), g, seed).map_err(core("DMC synthesis"))?;
            t.accumulate(&h_smc, 1.0).map_err(core("SMC+DMC reconstruction"))?;
            Some(t)
        }
        None => None,
    };
    let k = cfg.characterize.sv_count.min(h.rx_ports().min(h.tx_ports()));
    let mut capacity = Vec::new();
    let mut sv = Vec::new();
    for (i, snr) in cfg.characterize.snr_db.iter().enumerate() {
        let full = capacity_report(h, *snr, k).map_err(core("capacity"))?;
        let smc = if est.paths.is_empty() { None } else { Some(capacity_report(&h_smc, *snr, k).map_err(core("capacity"))?) };
        let both = match &h_both {
            Some(t) => Some(capacity_report(t, *snr, k).map_err(core("capacity"))?),
            None => None,
        };
        let c_smc = smc.as_ref().map_or(f64::NAN, |c| c.capacity);
        let c_both = both.as_ref().map_or(f64::NAN, |c| c.capacity);
        capacity.push(CapacityRow {
            position: id.to_string(),
            los,
            snr_db: *snr,
            full: full.capacity,
            smc: c_smc,
            smc_dmc: c_both,
            smc_rel_err: rel(c_smc, full.capacity),
            smc_dmc_rel_err: rel(c_both, full.capacity),
        });
        if i == 0 {
            for (channel, prof) in [("full", Some(&full)), ("smc", smc.as_ref()), ("smc_dmc", both.as_ref())] {
                if let Some(p) = prof {
                    sv.extend(p.sv_profile.iter().enumerate().map(|(index, s)| SvRow {
                        position: id.to_string(),
                        channel,
                        index,
                        sigma: *s,
                    }));
                }
            }
        }
    }
    let noise = est.dmc.as_ref().map_or(0.0, |d| d.noise_floor);
    let dmc = DmcRow {
        position: id.to_string(),
        los,
        dmc_power_fraction: dmc_power_fraction(h, &est.paths, noise).map_err(core("DMC power fraction"))?,
        capture_ratio: est.dmc.as_ref().map_or(f64::NAN, |d| d.power_capture_ratio),
        processes: est.dmc.as_ref().map_or(0, |d| d.processes.len()),
    };
    let grid = AngleGrid::uniform(cfg.characterize.spectrum_step_deg).map_err(core("angle grid"))?;
    let spec = bartlett_spectrum(h, Side::Rx, &grid, BartlettMode::Projection).map_err(core("Bartlett spectrum"))?;
    let p_db = spec.power_db();
    let n_az = spec.azimuths_deg.len();
    let mut spectrum = Vec::with_capacity(p_db.len());
    for (i, el) in spec.elevations_deg.iter().enumerate() {
        for (j, az) in spec.azimuths_deg.iter().enumerate() {
            spectrum.push(vec![*el, *az, p_db[i * n_az + j]]);
        }
    }
    Ok(PositionReport {
        record,
        psd,
        dmc_model,
        delay_ns: (0..g.points).map(|n| n as f64 * g.delay_resolution() * 1e9).collect(),
        capacity,
        sv,
        dmc,
        spectrum,
    })
}

const SCENARIOS: [(&str, Option<bool>); 3] = [("LOS", Some(true)), ("NLOS", Some(false)), ("ALL", None)];

fn in_scenario(r: &StatRecord, s: Option<bool>) -> bool {
    s.is_none_or(|los| r.los == los)
}

fn pathloss_rows(records: &[StatRecord], cfg: &CampaignConfig) -> Vec<PathLossRow> {
    let fc_ghz = cfg.grid.center_hz / 1e9;
    let nan = PathLossFit { model: PathLossModel::Ci, n: f64::NAN, beta: f64::NAN, sigma: f64::NAN, fc_ghz };
    SCENARIOS
        .iter()
        .map(|(name, s)| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| in_scenario(r, *s) && r.pl_db.is_finite() && r.distance_3d_m > 0.0)
                .map(|r| (r.distance_3d_m, r.pl_db))
                .collect();
            let pts = filter_min_distance(&pts, cfg.characterize.min_distance_m);
            let ci = fit_pathloss(&pts, PathLossModel::Ci, fc_ghz).unwrap_or(nan);
            let fi = fit_pathloss(&pts, PathLossModel::Fi, fc_ghz).unwrap_or(nan);
            PathLossRow {
                scenario: name.to_string(),
                count: pts.len(),
                ci_n: ci.n,
                ci_beta: ci.beta,
                ci_sigma: ci.sigma,
                fi_n: fi.n,
                fi_beta: fi.beta,
                fi_sigma: fi.sigma,
            }
        })
        .collect()
}

type Getter = fn(&StatRecord) -> f64;

const LSP_PARAMS: [(&str, LspTransform, Getter); 7] = [
    ("DS", LspTransform::Log10, |r| r.ds_s),
    ("ED", LspTransform::Log10, |r| r.ed_s),
    ("KF", LspTransform::Identity, |r| r.kf_db),
    ("ASD", LspTransform::Log10, |r| r.asd_deg),
    ("ASA", LspTransform::Log10, |r| r.asa_deg),
    ("ESD", LspTransform::Log10, |r| r.esd_deg),
    ("ESA", LspTransform::Log10, |r| r.esa_deg),
];

const POL_PARAMS: [(&str, LspTransform, Getter); 3] = [
    ("XPR_H", LspTransform::Identity, |r| r.xpr_h_db),
    ("XPR_V", LspTransform::Identity, |r| r.xpr_v_db),
    ("CPR", LspTransform::Identity, |r| r.cpr_db),
];

fn usable(v: f64, t: LspTransform) -> bool {
    v.is_finite() && (t == LspTransform::Identity || v > 0.0)
}

fn values(records: &[StatRecord], s: Option<bool>, t: LspTransform, get: Getter) -> Vec<f64> {
    records.iter().filter(|r| in_scenario(r, s)).map(get).filter(|v| usable(*v, t)).collect()
}

fn lsp_rows(records: &[StatRecord], params: &[(&str, LspTransform, Getter)]) -> Vec<LspRow> {
    let mut rows = Vec::new();
    for (name, s) in SCENARIOS {
        for (param, t, get) in params {
            let v = values(records, s, *t, *get);
            let fit = fit_lsp_distribution(&v, *t).unwrap_or(LspFit { mu: f64::NAN, sigma: f64::NAN });
            rows.push(LspRow {
                scenario: name.to_string(),
                parameter: param.to_string(),
                transform: *t,
                count: v.len(),
                mu: fit.mu,
                sigma: fit.sigma,
            });
        }
    }
    rows
}

/// Empirical CDF `(x_i, i / n)` of the finite values.
pub fn empirical_cdf(values: &[f64]) -> Vec<Vec<f64>> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, x)| vec![*x, (i + 1) as f64 / n]).collect()
}

fn db(v: f64) -> f64 {
    10.0 * v.max(1e-300).log10()
}

/// Loads estimates of every configured position and writes the report
/// bundle.
pub fn characterize(cfg: &CampaignConfig, layout: &Layout, jobs: usize) -> AppResult<ReportManifest> {
    let los = cfg.los_flags()?;
    let est_dir = layout.estimate_dir();
    let reports = run_pool(jobs, &cfg.positions, |i, pos| {
        let est: PositionEstimate = read_json(&est_dir.join(format!("{}.estimate.json", pos.id)))?;
        if est.id != pos.id {
            return Err(AppError::Config(format!("estimate for {} is labelled {}", pos.id, est.id)));
        }
        let (_, h) = read_container(&est.container)?;
        analyze(cfg, i, los[i], cfg.distance(pos), &est, &h)
    })?;

    let out = layout.report_dir();
    let mut files = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> AppResult<()> {
        write_atomic(&out.join(&name), &bytes)?;
        files.push(name);
        Ok(())
    };
    let records: Vec<StatRecord> = reports.iter().map(|r| r.record.clone()).collect();
    put("records.csv".into(), csv_bytes(&records)?)?;
    let pathloss = pathloss_rows(&records, cfg);
    put("pathloss.csv".into(), csv_bytes(&pathloss)?)?;
    let lsp = lsp_rows(&records, &LSP_PARAMS);
    put("lsp_fits.csv".into(), csv_bytes(&lsp)?)?;
    let polarization = lsp_rows(&records, &POL_PARAMS);
    put("polarization_fits.csv".into(), csv_bytes(&polarization)?)?;
    let sv: Vec<SvRow> = reports.iter().flat_map(|r| r.sv.clone()).collect();
    put("sv_profiles.csv".into(), csv_bytes(&sv)?)?;
    let cap: Vec<CapacityRow> = reports.iter().flat_map(|r| r.capacity.clone()).collect();
    put("capacity.csv".into(), csv_bytes(&cap)?)?;
    let dmc: Vec<DmcRow> = reports.iter().map(|r| r.dmc.clone()).collect();
    put("dmc_fractions.csv".into(), csv_bytes(&dmc)?)?;

    for r in &reports {
        let id = &r.record.position;
        let rows: Vec<Vec<f64>> = (0..r.psd.len())
            .map(|n| vec![r.delay_ns[n], db(r.psd[n]), r.dmc_model.as_ref().map_or(f64::NAN, |m| db(m[n]))])
            .collect();
        put(format!("plots/psd_{id}.csv"), csv_table(&["delay_ns", "psd_db", "dmc_model_db"], &rows)?)?;
        put(
            format!("plots/spectrum_{id}_rx.csv"),
            csv_table(&["elevation_deg", "azimuth_deg", "power_db"], &r.spectrum)?,
        )?;
    }
    for (name, s) in SCENARIOS {
        for (param, t, get) in LSP_PARAMS.iter().chain(&POL_PARAMS) {
            let v = values(&records, s, *t, *get);
            let x: Vec<f64> = match t {
                LspTransform::Log10 => v.iter().map(|x| x.log10()).collect(),
                LspTransform::Identity => v,
            };
            let label = match t {
                LspTransform::Log10 => "log10_value",
                LspTransform::Identity => "value",
            };
            put(format!("plots/cdf_{param}_{name}.csv"), csv_table(&[label, "probability"], &empirical_cdf(&x))?)?;
        }
    }
    let manifest = ReportManifest {
        positions: records.iter().map(|r| r.position.clone()).collect(),
        files,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Used by tests: loads a report manifest.
pub fn read_report_manifest(layout: &Layout) -> AppResult<ReportManifest> {
    read_json(&layout.report_dir().join(MANIFEST))
}
