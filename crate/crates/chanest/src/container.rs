//! `CHTN1` channel-tensor container.
//!
//! ```text
//! offset  size  content
//! 0       5     magic "CHTN1"
//! 5       8     header length H (u64, little-endian)
//! 13      H     header, UTF-8 TOML (see [`ContainerHeader`])
//! 13+H    16 N  payload: (re, im) f64 little-endian pairs,
//!               frequency fastest, then Tx port, then Rx port
//! ```
//!
//! `N = M_R M_T M_f`. The file ends exactly after the payload.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chanest_core::array::ArrayDescriptor;
use chanest_core::synth::META_SEED;
use chanest_core::{ChannelTensor, Complex64, FrequencyGrid};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 5] = b"CHTN1";
pub const PREAMBLE_LEN: usize = 13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub rx_ports: usize,
    pub tx_ports: usize,
    pub freq_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub grid: FrequencyGrid,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub tx_array: ArrayDescriptor,
    pub rx_array: ArrayDescriptor,
}

impl ContainerHeader {
    pub fn for_tensor(h: &ChannelTensor) -> Self {
        let mut metadata = h.metadata.clone();
        let seed = metadata.remove(META_SEED).and_then(|s| s.parse().ok());
        Self {
            rx_ports: h.rx_ports(),
            tx_ports: h.tx_ports(),
            freq_points: h.freq_points(),
            seed,
            grid: *h.grid(),
            metadata,
            tx_array: h.tx().descriptor().clone(),
            rx_array: h.rx().descriptor().clone(),
        }
    }

    pub fn values(&self) -> usize {
        self.rx_ports * self.tx_ports * self.freq_points
    }
}

pub fn encode(h: &ChannelTensor) -> AppResult<Vec<u8>> {
    let header = ContainerHeader::for_tensor(h);
    let text = toml::to_string(&header).map_err(|e| AppError::Config(format!("cannot encode container header: {e}")))?;
    let mut out = Vec::with_capacity(PREAMBLE_LEN + text.len() + 16 * h.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for v in h.data() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

/// Parses a container. `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> AppResult<(ContainerHeader, ChannelTensor)> {
    let fail = |offset: usize, msg: String| AppError::format(path, offset as u64, msg);
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail(0, "missing CHTN1 magic".into()));
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(fail(MAGIC.len(), "truncated header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let body = bytes.len() - PREAMBLE_LEN;
    if hlen > body as u64 {
        return Err(fail(5, format!("header length {hlen} exceeds the {body} bytes that follow")));
    }
    let hend = PREAMBLE_LEN + hlen as usize;
    let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..hend])
        .map_err(|e| fail(PREAMBLE_LEN + e.valid_up_to(), "header is not UTF-8".into()))?;
    let header: ContainerHeader = toml::from_str(text).map_err(|e| {
        let at = PREAMBLE_LEN + e.span().map_or(0, |s| s.start);
        fail(at, format!("bad header: {}", e.message()))
    })?;
    let tx = header.tx_array.build().map_err(|e| fail(PREAMBLE_LEN, format!("tx array: {e}")))?;
    let rx = header.rx_array.build().map_err(|e| fail(PREAMBLE_LEN, format!("rx array: {e}")))?;
    header.grid.validate().map_err(|e| fail(PREAMBLE_LEN, format!("grid: {e}")))?;
    if tx.port_count() != header.tx_ports || rx.port_count() != header.rx_ports || header.grid.points != header.freq_points {
        return Err(fail(
            PREAMBLE_LEN,
            format!(
                "dimensions {}x{}x{} disagree with arrays ({} Rx, {} Tx ports) or grid ({} points)",
                header.rx_ports,
                header.tx_ports,
                header.freq_points,
                rx.port_count(),
                tx.port_count(),
                header.grid.points
            ),
        ));
    }
    let payload = &bytes[hend..];
    let want = header.values().checked_mul(16).ok_or_else(|| fail(PREAMBLE_LEN, "dimensions overflow".into()))?;
    if payload.len() != want {
        let at = hend + payload.len().min(want);
        return Err(fail(at, format!("payload is {} bytes, expected {want}", payload.len())));
    }
    let data: Vec<Complex64> = payload
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    let mut t = ChannelTensor::from_data(Arc::new(tx), Arc::new(rx), header.grid, data)
        .map_err(|e| fail(hend, e.to_string()))?;
    t.metadata = header.metadata.clone();
    if let Some(s) = header.seed {
        t.metadata.insert(META_SEED.to_string(), s.to_string());
    }
    Ok((header, t))
}

pub fn read_container(path: &Path) -> AppResult<(ContainerHeader, ChannelTensor)> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_container(path: &Path, h: &ChannelTensor) -> AppResult<()> {
    write_atomic(path, &encode(h)?)
}
