//! Campaign configuration (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chanest_core::array::{ArrayDescriptor, ArrayModel, ElementPattern, Polarization};
use chanest_core::dmc::{AngularFitConfig, BartlettInitConfig, DetectConfig, LmConfig};
use chanest_core::smc::SageConfig;
use chanest_core::stats::ci_intercept_db;
use chanest_core::{FrequencyGrid, SPEED_OF_LIGHT};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Root of every seed in the campaign.
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub grid: FrequencyGrid,
    pub arrays: ArraysConfig,
    pub transmitter: TransmitterConfig,
    #[serde(default)]
    pub positions: Vec<PositionConfig>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub characterize: CharacterizeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraysConfig {
    pub tx: ArraySpec,
    pub rx: ArraySpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArraySpec {
    Upa {
        rows: usize,
        cols: usize,
        /// Defaults to half a wavelength at the carrier.
        #[serde(default)]
        spacing_m: Option<f64>,
        #[serde(default)]
        element: ElementSpec,
    },
    Uca {
        rings: usize,
        columns: usize,
        #[serde(default)]
        spacing_m: Option<f64>,
        #[serde(default)]
        element: ElementSpec,
    },
    Single {
        polarization: Polarization,
        #[serde(default)]
        element: ElementSpec,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ElementSpec {
    Patch { gain_dbi: f64 },
    Isotropic,
}

impl Default for ElementSpec {
    fn default() -> Self {
        Self::Patch { gain_dbi: 8.8 }
    }
}

impl ElementSpec {
    fn pattern(self) -> ElementPattern {
        match self {
            Self::Patch { gain_dbi } => ElementPattern::patch(gain_dbi),
            Self::Isotropic => ElementPattern::isotropic(),
        }
    }
}

impl ArraySpec {
    pub fn descriptor(&self, grid: &FrequencyGrid) -> ArrayDescriptor {
        let half = SPEED_OF_LIGHT / (2.0 * grid.center_hz);
        match *self {
            Self::Upa { rows, cols, spacing_m, element } => {
                ArrayDescriptor::Upa { rows, cols, spacing: spacing_m.unwrap_or(half), pattern: element.pattern() }
            }
            Self::Uca { rings, columns, spacing_m, element } => ArrayDescriptor::Uca {
                rings,
                columns,
                spacing: spacing_m.unwrap_or(half),
                pattern: element.pattern(),
            },
            Self::Single { polarization, element } => ArrayDescriptor::Single { polarization, pattern: element.pattern() },
        }
    }

    pub fn build(&self, grid: &FrequencyGrid) -> AppResult<ArrayModel> {
        self.descriptor(grid).build().map_err(|e| AppError::Config(format!("array: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitterConfig {
    pub position: [f64; 3],
    /// Azimuth of the Tx array boresight in the global frame.
    #[serde(default)]
    pub boresight_azimuth_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionConfig {
    pub id: String,
    pub position: [f64; 3],
    #[serde(default)]
    pub los: Option<bool>,
}

/// Random scenario drawn independently per position. Ranges are inclusive
/// `[low, high]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub smc_paths: [usize; 2],
    pub los_exponent: f64,
    pub nlos_exponent: f64,
    /// Path-loss intercept at 1 m; the free-space value when absent.
    pub intercept_db: Option<f64>,
    pub shadowing_db: f64,
    /// Extra loss of the first path when the position is NLOS.
    pub nlos_first_path_db: f64,
    /// Power of later paths relative to the first.
    pub relative_power_db: [f64; 2],
    pub excess_delay_ns: [f64; 2],
    pub xpr_db: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub tx_azimuth_deg: [f64; 2],
    pub dmc_processes: [usize; 2],
    /// Share of the noise-free power carried by the DMC.
    pub dmc_power_fraction: [f64; 2],
    pub dmc_decay_db_per_ns: [f64; 2],
    pub dmc_concentration: [f64; 2],
    /// Mean signal power per sample over the noise floor.
    pub snr_db: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            smc_paths: [3, 6],
            los_exponent: 2.0,
            nlos_exponent: 3.0,
            intercept_db: None,
            shadowing_db: 2.0,
            nlos_first_path_db: 6.0,
            relative_power_db: [-12.0, -3.0],
            excess_delay_ns: [15.0, 150.0],
            xpr_db: [8.0, 15.0],
            elevation_deg: [-15.0, 15.0],
            tx_azimuth_deg: [-60.0, 60.0],
            dmc_processes: [1, 2],
            dmc_power_fraction: [0.2, 0.5],
            dmc_decay_db_per_ns: [0.05, 0.2],
            dmc_concentration: [2.0, 20.0],
            snr_db: 25.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub sage: SageConfig,
    pub detect: DetectConfig,
    pub lm: LmConfig,
    /// Fit VMF mixtures to the residual spatial covariances.
    pub angular: bool,
    pub bartlett: BartlettInitConfig,
    pub angular_fit: AngularFitConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sage: SageConfig::default(),
            detect: DetectConfig::default(),
            lm: LmConfig::default(),
            angular: true,
            bartlett: BartlettInitConfig::default(),
            angular_fit: AngularFitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizeConfig {
    pub snr_db: Vec<f64>,
    pub sv_count: usize,
    /// Records closer than this are left out of the path-loss fits.
    pub min_distance_m: f64,
    pub spectrum_step_deg: f64,
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        Self { snr_db: vec![0.0, 10.0, 20.0], sv_count: 4, min_distance_m: 0.0, spectrum_step_deg: 5.0 }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k_max: Option<usize>,
    pub stop_db: Option<f64>,
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl CampaignConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> AppResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> AppResult<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = o.k_max {
            self.estimator.detect.k_max = k;
        }
        if let Some(s) = o.stop_db {
            self.estimator.sage.stop_db = s;
        }
        self.validate()
    }

    pub fn tx_array(&self) -> AppResult<ArrayModel> {
        self.arrays.tx.build(&self.grid)
    }

    pub fn rx_array(&self) -> AppResult<ArrayModel> {
        self.arrays.rx.build(&self.grid)
    }

    pub fn intercept_db(&self) -> f64 {
        self.scenario.intercept_db.unwrap_or_else(|| ci_intercept_db(self.grid.center_hz / 1e9))
    }

    pub fn distance(&self, p: &PositionConfig) -> f64 {
        let t = self.transmitter.position;
        ((p.position[0] - t[0]).powi(2) + (p.position[1] - t[1]).powi(2) + (p.position[2] - t[2]).powi(2)).sqrt()
    }

    /// LOS flags of all positions, or an error naming every position
    /// without one.
    pub fn los_flags(&self) -> AppResult<Vec<bool>> {
        let missing: Vec<&str> = self.positions.iter().filter(|p| p.los.is_none()).map(|p| p.id.as_str()).collect();
        if !missing.is_empty() {
            return Err(AppError::Config(format!("missing LOS flag for positions: {}", missing.join(", "))));
        }
        Ok(self.positions.iter().map(|p| p.los.unwrap_or_default()).collect())
    }

    pub fn validate(&self) -> AppResult<()> {
        let err = |m: String| Err(AppError::Config(m));
        self.grid.validate().map_err(|e| AppError::Config(format!("grid: {e}")))?;
        if self.seed > i64::MAX as u64 {
            return err(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        self.tx_array()?;
        self.rx_array()?;
        let mut ids = BTreeSet::new();
        for p in &self.positions {
            if p.id.is_empty() || !p.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || p.id.starts_with('.') {
                return err(format!("position id {:?} must be non-empty [A-Za-z0-9._-] not starting with '.'", p.id));
            }
            if !ids.insert(p.id.as_str()) {
                return err(format!("duplicate position id {:?}", p.id));
            }
            if p.position.iter().chain(&self.transmitter.position).any(|v| !v.is_finite()) {
                return err(format!("position {} has non-finite coordinates", p.id));
            }
        }
        let s = &self.scenario;
        if s.smc_paths[0] == 0 || s.smc_paths[0] > s.smc_paths[1] {
            return err("scenario.smc_paths must be 1 <= low <= high".into());
        }
        if s.dmc_processes[0] > s.dmc_processes[1] {
            return err("scenario.dmc_processes must be low <= high".into());
        }
        for (name, r) in [
            ("relative_power_db", s.relative_power_db),
            ("excess_delay_ns", s.excess_delay_ns),
            ("xpr_db", s.xpr_db),
            ("elevation_deg", s.elevation_deg),
            ("tx_azimuth_deg", s.tx_azimuth_deg),
            ("dmc_power_fraction", s.dmc_power_fraction),
            ("dmc_decay_db_per_ns", s.dmc_decay_db_per_ns),
            ("dmc_concentration", s.dmc_concentration),
        ] {
            if !range_ok(r) {
                return err(format!("scenario.{name} must be a finite [low, high] range"));
            }
        }
        if s.excess_delay_ns[0] < 0.0 {
            return err("scenario.excess_delay_ns must be >= 0".into());
        }
        if s.dmc_power_fraction[0] < 0.0 || s.dmc_power_fraction[1] >= 1.0 {
            return err("scenario.dmc_power_fraction must lie in [0, 1)".into());
        }
        if s.dmc_decay_db_per_ns[0] <= 0.0 || s.dmc_concentration[0] < 0.0 {
            return err("scenario DMC decay must be > 0 and concentration >= 0".into());
        }
        if s.elevation_deg[0] < -90.0 || s.elevation_deg[1] > 90.0 {
            return err("scenario.elevation_deg must lie in [-90, 90]".into());
        }
        for (name, v) in [
            ("los_exponent", s.los_exponent),
            ("nlos_exponent", s.nlos_exponent),
            ("shadowing_db", s.shadowing_db),
            ("nlos_first_path_db", s.nlos_first_path_db),
            ("snr_db", s.snr_db),
        ] {
            if !v.is_finite() {
                return err(format!("scenario.{name} must be finite"));
            }
        }
        let span_ns = self.grid.delay_span() * 1e9;
        for p in &self.positions {
            let first_ns = self.distance(p) / SPEED_OF_LIGHT * 1e9;
            if first_ns + s.excess_delay_ns[1] >= span_ns {
                return err(format!(
                    "position {}: delay {:.1} ns plus excess {:.1} ns exceeds the {:.1} ns delay span",
                    p.id, first_ns, s.excess_delay_ns[1], span_ns
                ));
            }
        }
        self.estimator.sage.validate().map_err(|e| AppError::Config(format!("estimator.sage: {e}")))?;
        if self.estimator.detect.k_max == 0 {
            return err("estimator.detect.k_max must be >= 1".into());
        }
        let c = &self.characterize;
        if c.sv_count == 0 || c.snr_db.iter().any(|v| !v.is_finite()) {
            return err("characterize needs sv_count >= 1 and finite SNR values".into());
        }
        if !(c.spectrum_step_deg > 0.0 && c.spectrum_step_deg <= 90.0) {
            return err("characterize.spectrum_step_deg must lie in (0, 90]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
seed = 11
[grid]
center_hz = 5.5e9
bandwidth_hz = 320e6
points = 64
[arrays.tx]
kind = "upa"
rows = 1
cols = 2
[arrays.rx]
kind = "single"
polarization = "V"
element = { type = "isotropic" }
[transmitter]
position = [0.0, 0.0, 1.5]
[[positions]]
id = "A"
position = [10.0, 0.0, 1.5]
los = true
[[positions]]
id = "B"
position = [12.0, 5.0, 1.5]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = CampaignConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.positions.len(), 2);
        assert_eq!(c.estimator.detect.k_max, 5);
        assert!((c.distance(&c.positions[0]) - 10.0).abs() < 1e-12);
        assert_eq!(c.tx_array().unwrap().port_count(), 4);
    }

    #[test]
    fn missing_los_lists_positions() {
        let c = CampaignConfig::parse(MINIMAL).unwrap();
        let e = c.los_flags().unwrap_err().to_string();
        assert!(e.contains('B') && !e.contains("A,"), "{e}");
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("points = 64", "points = 0"),
            ("id = \"B\"", "id = \"A\""),
            ("id = \"B\"", "id = \"../x\""),
            ("seed = 11", "seed = 11\nbogus = 1"),
            ("position = [12.0, 5.0, 1.5]", "position = [400.0, 0.0, 1.5]"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(matches!(CampaignConfig::parse(&text), Err(AppError::Config(_))), "{to}");
        }
    }

    #[test]
    fn overrides_apply() {
        let mut c = CampaignConfig::parse(MINIMAL).unwrap();
        c.apply(&Overrides { seed: Some(5), k_max: Some(2), stop_db: Some(-15.0) }).unwrap();
        assert_eq!((c.seed, c.estimator.detect.k_max, c.estimator.sage.stop_db), (5, 2, -15.0));
        assert!(c.apply(&Overrides { k_max: Some(0), ..Default::default() }).is_err());
    }
}
