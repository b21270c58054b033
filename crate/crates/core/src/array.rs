//! Antenna array geometries and dual-polarized response matrices.
//!
//! Angles follow the usual channel-sounding convention: elevation measured
//! from the horizontal plane, azimuth counter-clockwise from +x. The unit
//! direction is `[cos el cos az, cos el sin az, sin el]`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::linalg::CMat;
use crate::math::{deg2rad, dot3, rad2deg, unit_vector};
use crate::{Result, SPEED_OF_LIGHT};

/// Half-wavelength spacing at 5.5 GHz.
pub const HALF_WAVELENGTH_5G5: f64 = SPEED_OF_LIGHT / (2.0 * 5.5e9);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    V,
    H,
}

/// Synthetic element radiation pattern.
///
/// Power gain is `G0 cos^q(psi)` (with `q` set by the 3 dB beamwidth) floored
/// at `G0 - front_to_back`. Cross-polar leakage is interpolated linearly in
/// dB between `axial_xpr_db` on boresight and `sector_xpr_db` at 60 degrees
/// and held constant beyond.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementPattern {
    pub boresight_gain_dbi: f64,
    /// `None` means isotropic.
    pub beamwidth_3db_deg: Option<f64>,
    pub axial_xpr_db: f64,
    pub sector_xpr_db: f64,
    pub front_to_back_db: f64,
}

impl Default for ElementPattern {
    /// Dual-polarized patch: 8.8 dBi, 15/10 dB XPR, 17 dB front-to-back.
    fn default() -> Self {
        Self::patch(8.8)
    }
}

impl ElementPattern {
    /// Patch element of the given boresight gain. The beamwidth comes from
    /// the Kraus estimate `D = 41253 / bw^2` for a symmetric main lobe.
    pub fn patch(gain_dbi: f64) -> Self {
        let d = 10f64.powf(gain_dbi / 10.0);
        Self {
            boresight_gain_dbi: gain_dbi,
            beamwidth_3db_deg: Some((41253.0 / d).sqrt().min(179.0)),
            axial_xpr_db: 15.0,
            sector_xpr_db: 10.0,
            front_to_back_db: 17.0,
        }
    }

    /// 0 dBi, no cross-polar leakage.
    pub fn isotropic() -> Self {
        Self {
            boresight_gain_dbi: 0.0,
            beamwidth_3db_deg: None,
            axial_xpr_db: f64::INFINITY,
            sector_xpr_db: f64::INFINITY,
            front_to_back_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.boresight_gain_dbi.is_finite() {
            return Err(invalid!("boresight gain must be finite"));
        }
        if let Some(bw) = self.beamwidth_3db_deg {
            if !(bw > 0.0 && bw < 180.0) {
                return Err(invalid!("beamwidth {bw} deg outside (0, 180)"));
            }
        }
        if self.axial_xpr_db.is_nan()
            || self.sector_xpr_db.is_nan()
            || self.axial_xpr_db < self.sector_xpr_db
        {
            return Err(invalid!(
                "axial XPR {} dB must be >= sector XPR {} dB",
                self.axial_xpr_db,
                self.sector_xpr_db
            ));
        }
        if !(self.front_to_back_db >= 0.0) {
            return Err(invalid!("front-to-back ratio must be >= 0 dB"));
        }
        Ok(())
    }

    fn cos_exponent(&self) -> Option<f64> {
        self.beamwidth_3db_deg
            .map(|bw| 0.5f64.ln() / deg2rad(bw / 2.0).cos().ln())
    }

    /// Linear power gain at off-boresight angle with cosine `cos_psi`.
    pub fn power_gain(&self, cos_psi: f64) -> f64 {
        let g0 = 10f64.powf(self.boresight_gain_dbi / 10.0);
        match self.cos_exponent() {
            None => g0,
            Some(q) => {
                let floor = 10f64.powf(-self.front_to_back_db / 10.0);
                let rel = if cos_psi > 0.0 { cos_psi.powf(q) } else { 0.0 };
                g0 * rel.max(floor)
            }
        }
    }

    /// Cross-polar discrimination (dB) at off-boresight angle `psi_deg`.
    pub fn xpr_db(&self, psi_deg: f64) -> f64 {
        if self.axial_xpr_db.is_infinite() && self.sector_xpr_db.is_infinite() {
            return f64::INFINITY;
        }
        let t = (psi_deg.abs() / 60.0).min(1.0);
        self.axial_xpr_db + (self.sector_xpr_db - self.axial_xpr_db) * t
    }

    /// Co-polar amplitude and cross-polar leakage amplitude.
    #[inline]
    fn amplitudes(&self, cos_psi: f64) -> (f64, f64) {
        let amp = self.power_gain(cos_psi).sqrt();
        let xpr = self.xpr_db(rad2deg(cos_psi.clamp(-1.0, 1.0).acos()));
        let leak = if xpr.is_infinite() { 0.0 } else { 10f64.powf(-xpr / 20.0) };
        (amp, amp * leak)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayElement {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
    pub polarization: Polarization,
    pub pattern: ElementPattern,
}

/// Serializable description an [`ArrayModel`] is rebuilt from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArrayDescriptor {
    Upa {
        rows: usize,
        cols: usize,
        spacing: f64,
        pattern: ElementPattern,
    },
    Uca {
        rings: usize,
        columns: usize,
        spacing: f64,
        pattern: ElementPattern,
    },
    /// One port at the origin facing +x.
    Single {
        polarization: Polarization,
        pattern: ElementPattern,
    },
    Custom { elements: Vec<ArrayElement> },
}

impl ArrayDescriptor {
    pub fn build(&self) -> Result<ArrayModel> {
        match self {
            Self::Upa { rows, cols, spacing, pattern } => build_upa(*rows, *cols, *spacing, *pattern),
            Self::Uca { rings, columns, spacing, pattern } => {
                build_uca(*rings, *columns, *spacing, *pattern)
            }
            Self::Single { polarization, pattern } => build_single(*polarization, *pattern),
            Self::Custom { elements } => ArrayModel::from_elements(elements.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayModel {
    descriptor: ArrayDescriptor,
    elements: Vec<ArrayElement>,
}

pub fn build_upa(rows: usize, cols: usize, spacing: f64, pattern: ElementPattern) -> Result<ArrayModel> {
    if rows == 0 || cols == 0 {
        return Err(invalid!("UPA needs rows, cols >= 1 (got {rows}x{cols})"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid!("UPA spacing must be positive (got {spacing})"));
    }
    pattern.validate()?;
    let mut elements = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            for polarization in [Polarization::V, Polarization::H] {
                elements.push(ArrayElement {
                    position: [0.0, c as f64 * spacing, r as f64 * spacing],
                    orientation: [1.0, 0.0, 0.0],
                    polarization,
                    pattern,
                });
            }
        }
    }
    Ok(ArrayModel {
        descriptor: ArrayDescriptor::Upa { rows, cols, spacing, pattern },
        elements,
    })
}

pub fn build_uca(rings: usize, columns: usize, spacing: f64, pattern: ElementPattern) -> Result<ArrayModel> {
    if columns < 3 {
        return Err(invalid!("UCA needs at least 3 columns (got {columns})"));
    }
    if rings == 0 {
        return Err(invalid!("UCA needs at least one ring"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid!("UCA spacing must be positive (got {spacing})"));
    }
    pattern.validate()?;
    let radius = uca_radius(columns, spacing);
    let mut elements = Vec::with_capacity(2 * rings * columns);
    for i in 0..rings {
        for j in 0..columns {
            let (s, c) = (2.0 * PI * j as f64 / columns as f64).sin_cos();
            for polarization in [Polarization::V, Polarization::H] {
                elements.push(ArrayElement {
                    position: [radius * c, radius * s, i as f64 * spacing],
                    orientation: [c, s, 0.0],
                    polarization,
                    pattern,
                });
            }
        }
    }
    Ok(ArrayModel {
        descriptor: ArrayDescriptor::Uca { rings, columns, spacing, pattern },
        elements,
    })
}

/// Radius placing `columns` elements `spacing` apart along the arc.
pub fn uca_radius(columns: usize, spacing: f64) -> f64 {
    spacing / (2.0 * PI / columns as f64)
}

pub fn build_single(polarization: Polarization, pattern: ElementPattern) -> Result<ArrayModel> {
    pattern.validate()?;
    Ok(ArrayModel {
        descriptor: ArrayDescriptor::Single { polarization, pattern },
        elements: alloc::vec![ArrayElement {
            position: [0.0; 3],
            orientation: [1.0, 0.0, 0.0],
            polarization,
            pattern,
        }],
    })
}

impl ArrayModel {
    pub fn from_elements(elements: Vec<ArrayElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(invalid!("array needs at least one element"));
        }
        for (i, e) in elements.iter().enumerate() {
            let n = dot3(&e.orientation, &e.orientation).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(invalid!("element {i} orientation norm {n} is not unit"));
            }
            if e.position.iter().any(|p| !p.is_finite()) {
                return Err(invalid!("element {i} position is not finite"));
            }
            e.pattern.validate()?;
        }
        Ok(Self {
            descriptor: ArrayDescriptor::Custom { elements: elements.clone() },
            elements,
        })
    }

    pub fn descriptor(&self) -> &ArrayDescriptor {
        &self.descriptor
    }

    pub fn elements(&self) -> &[ArrayElement] {
        &self.elements
    }

    pub fn port_count(&self) -> usize {
        self.elements.len()
    }

    /// Response matrix (`ports x 2`): column 0 answers V-polarized incidence,
    /// column 1 H-polarized incidence.
    pub fn response_matrix(&self, elevation_deg: f64, azimuth_deg: f64, frequency: f64) -> Result<CMat> {
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(invalid!("elevation {elevation_deg} outside [-90, 90]"));
        }
        if !(-180.0..180.0).contains(&azimuth_deg) {
            return Err(invalid!("azimuth {azimuth_deg} outside [-180, 180)"));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(invalid!("frequency must be positive"));
        }
        let dir = unit_vector(deg2rad(elevation_deg), deg2rad(azimuth_deg));
        let mut out = alloc::vec![Complex64::new(0.0, 0.0); 2 * self.port_count()];
        self.fill_response(&dir, frequency, &mut out);
        Ok(CMat::from_vec(self.port_count(), 2, out))
    }

    /// Column-major response into `out` (length `2 * ports`) for a unit
    /// direction. No range checks.
    pub fn fill_response(&self, dir: &[f64; 3], frequency: f64, out: &mut [Complex64]) {
        let p = self.port_count();
        debug_assert_eq!(out.len(), 2 * p);
        let k0 = 2.0 * PI * frequency / SPEED_OF_LIGHT;
        let origin = self.elements[0].position;
        for (i, e) in self.elements.iter().enumerate() {
            let rel = [
                e.position[0] - origin[0],
                e.position[1] - origin[1],
                e.position[2] - origin[2],
            ];
            let phase = Complex64::from_polar(1.0, k0 * dot3(dir, &rel));
            let (co, cross) = e.pattern.amplitudes(dot3(dir, &e.orientation));
            let (v, h) = match e.polarization {
                Polarization::V => (co, cross),
                Polarization::H => (cross, co),
            };
            out[i] = phase * v;
            out[p + i] = phase * h;
        }
    }

    /// Per-port scalar response (sum of the two polarization columns).
    pub fn fill_scalar_response(&self, dir: &[f64; 3], frequency: f64, out: &mut [Complex64]) {
        let p = self.port_count();
        let mut full = alloc::vec![Complex64::new(0.0, 0.0); 2 * p];
        self.fill_response(dir, frequency, &mut full);
        for i in 0..p {
            out[i] = full[i] + full[p + i];
        }
    }
}

impl core::fmt::Display for ArrayModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let kind: alloc::string::String = match &self.descriptor {
            ArrayDescriptor::Upa { rows, cols, .. } => format!("UPA {rows}x{cols}"),
            ArrayDescriptor::Uca { rings, columns, .. } => format!("UCA {rings}x{columns}"),
            ArrayDescriptor::Single { .. } => "single".into(),
            ArrayDescriptor::Custom { .. } => "custom".into(),
        };
        write!(f, "{kind} ({} ports)", self.port_count())
    }
}
