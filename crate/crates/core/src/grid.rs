//! Frequency grids and the channel tensor exchanged between all stages.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::ArrayModel;
use crate::error::invalid;
use crate::linalg::CMat;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub points: usize,
}

impl FrequencyGrid {
    pub fn new(center_hz: f64, bandwidth_hz: f64, points: usize) -> Result<Self> {
        let g = Self { center_hz, bandwidth_hz, points };
        g.validate()?;
        Ok(g)
    }

    /// 5.5 GHz carrier, 320 MHz bandwidth.
    pub fn sounder(points: usize) -> Self {
        Self { center_hz: 5.5e9, bandwidth_hz: 320e6, points }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(invalid!("frequency grid needs at least one point"));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(invalid!("bandwidth must be positive"));
        }
        if !(self.center_hz > 0.0 && self.center_hz.is_finite()) {
            return Err(invalid!("center frequency must be positive"));
        }
        Ok(())
    }

    /// `Δf = B / M_f`.
    pub fn spacing(&self) -> f64 {
        self.bandwidth_hz / self.points as f64
    }

    /// `Δτ = 1 / B`.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    /// Unambiguous delay span `M_f Δτ`.
    pub fn delay_span(&self) -> f64 {
        self.points as f64 * self.delay_resolution()
    }

    /// Offset of point `m` from the carrier.
    pub fn offset(&self, m: usize) -> f64 {
        (m as f64 - (self.points as f64 - 1.0) / 2.0) * self.spacing()
    }

    pub fn frequency(&self, m: usize) -> f64 {
        self.center_hz + self.offset(m)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.points).map(|m| self.frequency(m)).collect()
    }

    /// Normalized delay `τ / (M_f Δτ)`.
    pub fn normalize_delay(&self, tau: f64) -> f64 {
        tau / self.delay_span()
    }
}

/// Complex response over (Rx port, Tx port, frequency).
///
/// Storage is frequency-fastest, then Tx, then Rx:
/// `index(r, t, f) = (r * M_T + t) * M_f + f`.
#[derive(Clone, Debug)]
pub struct ChannelTensor {
    grid: FrequencyGrid,
    tx: Arc<ArrayModel>,
    rx: Arc<ArrayModel>,
    data: Vec<Complex64>,
    pub metadata: BTreeMap<String, String>,
}

impl ChannelTensor {
    pub fn zeros(tx: Arc<ArrayModel>, rx: Arc<ArrayModel>, grid: FrequencyGrid) -> Self {
        let n = tx.port_count() * rx.port_count() * grid.points;
        Self { grid, tx, rx, data: vec![Complex64::new(0.0, 0.0); n], metadata: BTreeMap::new() }
    }

    pub fn from_data(
        tx: Arc<ArrayModel>,
        rx: Arc<ArrayModel>,
        grid: FrequencyGrid,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        let n = tx.port_count() * rx.port_count() * grid.points;
        if data.len() != n {
            return Err(invalid!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                rx.port_count(),
                tx.port_count(),
                grid.points
            ));
        }
        Ok(Self { grid, tx, rx, data, metadata: BTreeMap::new() })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }
    pub fn tx(&self) -> &Arc<ArrayModel> {
        &self.tx
    }
    pub fn rx(&self) -> &Arc<ArrayModel> {
        &self.rx
    }
    pub fn rx_ports(&self) -> usize {
        self.rx.port_count()
    }
    pub fn tx_ports(&self) -> usize {
        self.tx.port_count()
    }
    pub fn freq_points(&self) -> usize {
        self.grid.points
    }
    pub fn links(&self) -> usize {
        self.rx_ports() * self.tx_ports()
    }

    #[inline]
    pub fn index(&self, r: usize, t: usize, f: usize) -> usize {
        (r * self.tx_ports() + t) * self.grid.points + f
    }

    #[inline]
    pub fn get(&self, r: usize, t: usize, f: usize) -> Complex64 {
        self.data[self.index(r, t, f)]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Frequency response of one Rx/Tx port pair.
    pub fn link(&self, r: usize, t: usize) -> &[Complex64] {
        let s = self.index(r, t, 0);
        &self.data[s..s + self.grid.points]
    }

    /// `M_R x M_T` matrix at frequency index `f`.
    pub fn slice(&self, f: usize) -> CMat {
        CMat::from_fn(self.rx_ports(), self.tx_ports(), |r, t| self.get(r, t, f))
    }

    /// Total power `sum |h|^2`.
    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Errors unless `other` has the same arrays and grid.
    pub fn check_compatible(&self, other: &ChannelTensor) -> Result<()> {
        if self.grid != other.grid
            || self.tx.port_count() != other.tx.port_count()
            || self.rx.port_count() != other.rx.port_count()
            || (!Arc::ptr_eq(&self.tx, &other.tx) && self.tx.elements() != other.tx.elements())
            || (!Arc::ptr_eq(&self.rx, &other.rx) && self.rx.elements() != other.rx.elements())
        {
            return Err(Error::DimensionMismatch(alloc::format!(
                "tensors {}x{}x{} and {}x{}x{} do not share arrays and grid",
                self.rx_ports(),
                self.tx_ports(),
                self.freq_points(),
                other.rx_ports(),
                other.tx_ports(),
                other.freq_points()
            )));
        }
        Ok(())
    }

    /// Elementwise `self += sign * other`.
    pub fn accumulate(&mut self, other: &ChannelTensor, sign: f64) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * sign;
        }
        Ok(())
    }
}
