//! Von Mises-Fisher mixtures on the unit sphere and a fixed product
//! quadrature used to integrate against them.

use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::math::{deg2rad, dot3, gauss_legendre, unit_vector};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmfComponent {
    pub mean_elevation_deg: f64,
    pub mean_azimuth_deg: f64,
    pub concentration: f64,
    pub weight: f64,
}

impl VmfComponent {
    pub fn mean_direction(&self) -> [f64; 3] {
        unit_vector(deg2rad(self.mean_elevation_deg), deg2rad(self.mean_azimuth_deg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmfMixture {
    pub components: Vec<VmfComponent>,
}

impl VmfMixture {
    pub fn new(components: Vec<VmfComponent>) -> Result<Self> {
        let m = Self { components };
        m.validate()?;
        Ok(m)
    }

    /// Uniform distribution over the sphere.
    pub fn uniform() -> Self {
        Self::single(0.0, 0.0, 0.0)
    }

    pub fn single(elevation_deg: f64, azimuth_deg: f64, concentration: f64) -> Self {
        Self {
            components: alloc::vec![VmfComponent {
                mean_elevation_deg: elevation_deg,
                mean_azimuth_deg: azimuth_deg,
                concentration,
                weight: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(invalid!("VMF mixture needs at least one component"));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if !(c.concentration >= 0.0 && c.concentration.is_finite()) {
                return Err(invalid!("component {i}: concentration must be finite and >= 0"));
            }
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(invalid!("component {i}: weight {} outside [0, 1]", c.weight));
            }
            if !(-90.0..=90.0).contains(&c.mean_elevation_deg) || !c.mean_azimuth_deg.is_finite() {
                return Err(invalid!("component {i}: mean direction out of range"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid!("VMF weights sum to {total}, expected 1"));
        }
        Ok(())
    }

    /// Mixture density at a unit direction.
    pub fn density_at(&self, dir: &[f64; 3]) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * ln_vmf(c.concentration, dot3(&c.mean_direction(), dir)).exp())
            .sum()
    }
}

/// Mixture density at (elevation, azimuth) in degrees.
pub fn vmf_density(mixture: &VmfMixture, elevation_deg: f64, azimuth_deg: f64) -> f64 {
    mixture.density_at(&unit_vector(deg2rad(elevation_deg), deg2rad(azimuth_deg)))
}

/// Log density of a single component at `cos_angle = <mu, omega>`.
///
/// Written as `ln k - ln 2pi - ln(1 - e^{-2k}) + k (cos_angle - 1)` so that
/// large concentrations never overflow.
pub fn ln_vmf(kappa: f64, cos_angle: f64) -> f64 {
    if kappa < 1e-8 {
        return -(4.0 * PI).ln() + kappa * cos_angle;
    }
    kappa.ln() - (2.0 * PI).ln() - (-(-2.0 * kappa).exp_m1()).ln() + kappa * (cos_angle - 1.0)
}

/// `d ln f / d kappa` for a single component.
pub fn d_ln_vmf_dkappa(kappa: f64, cos_angle: f64) -> f64 {
    // 1/k - coth k, which tends to -k/3 near zero
    let a = if kappa < 1e-3 {
        -kappa / 3.0 + kappa.powi(3) / 45.0
    } else {
        1.0 / kappa - 1.0 - 2.0 / (2.0 * kappa).exp_m1()
    };
    a + cos_angle
}

/// Product quadrature: Gauss-Legendre in `sin(elevation)` times a uniform
/// azimuth grid. Weights sum to `4 pi`.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    pub dirs: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn new(n_elevation: usize, n_azimuth: usize) -> Self {
        let (u, wu) = gauss_legendre(n_elevation);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut dirs = Vec::with_capacity(n_elevation * n_azimuth);
        let mut weights = Vec::with_capacity(n_elevation * n_azimuth);
        for (ui, wi) in u.iter().zip(&wu) {
            let el = ui.asin();
            for j in 0..n_azimuth {
                dirs.push(unit_vector(el, -PI + (j as f64 + 0.5) * dphi));
                weights.push(wi * dphi);
            }
        }
        Self { dirs, weights }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn integrate<F: FnMut(&[f64; 3]) -> f64>(&self, mut f: F) -> f64 {
        self.dirs.iter().zip(&self.weights).map(|(d, w)| w * f(d)).sum()
    }
}

impl Default for SphereQuadrature {
    fn default() -> Self {
        Self::new(64, 128)
    }
}
