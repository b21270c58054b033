//! Synthesis and estimation stages.
//!
//! Output tree under the campaign root:
//!
//! ```text
//! synth/<id>.chtn               channel tensor containers
//! synth/manifest.json           seeds, container names and planted truths
//! estimate/<id>.estimate.json   paths, residual powers, DMC fit reports
//! estimate/<id>.paths.csv       specular path table
//! estimate/manifest.json
//! report/...                    see `characterize`
//! ```
//!
//! Every file is written atomically and each manifest is written after all
//! files it lists.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chanest_core::dmc::{bartlett_init_from_covariance, estimate_delay_processes, fit_dmc_angular, AngularFitReport, DmcFitReport};
use chanest_core::smc::{delay_periodogram, rx_spatial_marginal, smc_residual, tx_spatial_marginal, SageEstimator};
use chanest_core::synth::SmcPath;
use chanest_core::ChannelTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;
use crate::container::{read_container, write_container};
use crate::error::{AppError, AppResult};
use crate::io::{csv_bytes, write_atomic, write_json};
use crate::scenario::{generate, realize, PositionTruth};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }
    pub fn estimate_dir(&self) -> PathBuf {
        self.root.join("estimate")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Runs `f` over `items` on a pool of `jobs` threads (0 = one per core),
/// keeping input order. The first failure in input order is returned.
pub fn run_pool<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(usize, &T) -> AppResult<R> + Sync) -> AppResult<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| AppError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEntry {
    /// Container file name inside `synth/`.
    pub container: String,
    pub truth: PositionTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub campaign_seed: u64,
    pub positions: Vec<SynthEntry>,
}

pub fn synth(cfg: &CampaignConfig, layout: &Layout, jobs: usize) -> AppResult<SynthManifest> {
    let los = cfg.los_flags()?;
    let tx = Arc::new(cfg.tx_array()?);
    let rx = Arc::new(cfg.rx_array()?);
    let dir = layout.synth_dir();
    let entries = run_pool(jobs, &cfg.positions, |i, pos| {
        let truth = generate(cfg, i, pos, los[i], &tx, &rx)?;
        let h = realize(&truth, &tx, &rx, cfg)?;
        let name = format!("{}.chtn", pos.id);
        write_container(&dir.join(&name), &h)?;
        log::info!("synthesized {}", pos.id);
        Ok(SynthEntry { container: name, truth })
    })?;
    let manifest = SynthManifest { campaign_seed: cfg.seed, positions: entries };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Estimation result for one container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub id: String,
    pub container: PathBuf,
    /// Strongest first.
    pub paths: Vec<SmcPath>,
    pub total_power: f64,
    pub residual_power: f64,
    pub dmc: Option<DmcFitReport>,
    pub angular_rx: Option<AngularFitReport>,
    pub angular_tx: Option<AngularFitReport>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub id: String,
    pub container: PathBuf,
    pub estimate: String,
    pub paths_csv: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateManifest {
    pub positions: Vec<EstimateEntry>,
}

#[derive(Serialize)]
struct PathRow {
    index: usize,
    delay_ns: f64,
    eoa_deg: f64,
    aoa_deg: f64,
    eod_deg: f64,
    aod_deg: f64,
    power_db: f64,
    vv_re: f64,
    vv_im: f64,
    vh_re: f64,
    vh_im: f64,
    hv_re: f64,
    hv_im: f64,
    hh_re: f64,
    hh_im: f64,
}

pub fn path_rows_csv(paths: &[SmcPath]) -> AppResult<Vec<u8>> {
    let rows: Vec<PathRow> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| PathRow {
            index: i,
            delay_ns: p.delay_s * 1e9,
            eoa_deg: p.eoa_deg,
            aoa_deg: p.aoa_deg,
            eod_deg: p.eod_deg,
            aod_deg: p.aod_deg,
            power_db: 10.0 * p.power().log10(),
            vv_re: p.amp[0][0].re,
            vv_im: p.amp[0][0].im,
            vh_re: p.amp[0][1].re,
            vh_im: p.amp[0][1].im,
            hv_re: p.amp[1][0].re,
            hv_im: p.amp[1][0].im,
            hh_re: p.amp[1][1].re,
            hh_im: p.amp[1][1].im,
        })
        .collect();
    csv_bytes(&rows)
}

/// SAGE paths, residual DMC delay fit and, when enabled, angular fits.
pub fn estimate_tensor(id: &str, container: &Path, h: &ChannelTensor, cfg: &CampaignConfig) -> AppResult<PositionEstimate> {
    let ctx = |stage: &str| format!("{id}: {stage}");
    let est = &cfg.estimator;
    let sage = SageEstimator::new(h.tx(), h.rx(), h.grid(), est.sage).map_err(|e| AppError::core(ctx("SAGE setup"), e))?;
    let paths = sage.estimate(h).map_err(|e| AppError::core(ctx("SAGE"), e))?;
    let resid = smc_residual(h, &paths).map_err(|e| AppError::core(ctx("residual"), e))?;
    let mut warnings = Vec::new();
    let dmc = estimate_delay_processes(&delay_periodogram(&resid), h.grid(), &est.detect, &est.lm)
        .map_err(|e| AppError::core(ctx("DMC delay fit"), e))?;
    match &dmc {
        Some(r) => warnings.extend(r.warnings.iter().cloned()),
        None => warnings.push("no DMC process detected".to_string()),
    }
    let (mut angular_rx, mut angular_tx) = (None, None);
    if est.angular && dmc.is_some() && resid.power() > 0.0 {
        for (slot, r, arr, side) in [
            (&mut angular_rx, rx_spatial_marginal(&resid), h.rx(), "rx"),
            (&mut angular_tx, tx_spatial_marginal(&resid), h.tx(), "tx"),
        ] {
            let init = bartlett_init_from_covariance(&r, arr, h.grid().center_hz, &est.bartlett)
                .map_err(|e| AppError::core(ctx(&format!("{side} angular init")), e))?;
            let fit = fit_dmc_angular(&r, &init, arr, h.grid(), &est.angular_fit)
                .map_err(|e| AppError::core(ctx(&format!("{side} angular fit")), e))?;
            *slot = Some(fit);
        }
    }
    for w in &warnings {
        log::warn!("{id}: {w}");
    }
    Ok(PositionEstimate {
        id: id.to_string(),
        container: container.to_path_buf(),
        paths,
        total_power: h.power(),
        residual_power: resid.power(),
        dmc,
        angular_rx,
        angular_tx,
        warnings,
    })
}

pub fn estimate(containers: &[PathBuf], cfg: &CampaignConfig, layout: &Layout, jobs: usize) -> AppResult<EstimateManifest> {
    let dir = layout.estimate_dir();
    let results = run_pool(jobs, containers, |_, path| {
        let (_, h) = read_container(path)?;
        let id = match h.metadata.get("position") {
            Some(id) => id.clone(),
            None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(AppError::format(path, 0, format!("unusable position id {id:?}")));
        }
        estimate_tensor(&id, path, &h, cfg)
    })?;
    let mut seen = BTreeSet::new();
    for e in &results {
        if !seen.insert(e.id.as_str()) {
            return Err(AppError::Config(format!("position {} appears in more than one container", e.id)));
        }
    }
    let entries = run_pool(jobs, &results, |_, e| {
        let estimate = format!("{}.estimate.json", e.id);
        let paths_csv = format!("{}.paths.csv", e.id);
        write_atomic(&dir.join(&paths_csv), &path_rows_csv(&e.paths)?)?;
        write_json(&dir.join(&estimate), e)?;
        log::info!("estimated {}: {} paths", e.id, e.paths.len());
        Ok(EstimateEntry { id: e.id.clone(), container: e.container.clone(), estimate, paths_csv })
    })?;
    let manifest = EstimateManifest { positions: entries };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Containers listed by a synthesis manifest, if one exists.
pub fn synthesized_containers(layout: &Layout) -> AppResult<Vec<PathBuf>> {
    let path = layout.synth_dir().join(MANIFEST);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let m: SynthManifest = crate::io::read_json(&path)?;
    Ok(m.positions.iter().map(|e| layout.synth_dir().join(&e.container)).collect())
}
