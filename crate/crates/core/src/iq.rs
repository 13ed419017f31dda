//! Complex baseband sample buffers and the on-disk I/Q format.
//!
//! Samples are stored as little-endian `f32` pairs, interleaved `I,Q,I,Q,...`.
//! An optional sidecar JSON file next to the data (`<path>.json`) records
//! `{"sample_rate_hz": ..., "n_samples": ...}`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};

/// A contiguous run of complex baseband samples at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    samples: Vec<Complex32>,
    sample_rate_hz: f64,
}

impl IqBuffer {
    /// Wraps `samples`, rejecting a non-positive rate or non-finite components.
    pub fn new(samples: Vec<Complex32>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(DpdError::config(format!(
                "sample_rate_hz must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !(s.re.is_finite() && s.im.is_finite()))
        {
            return Err(DpdError::DegenerateInput(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![Complex32::new(0.0, 0.0); len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[Complex32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |x|² accumulated in double precision.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .samples
            .iter()
            .map(|s| {
                let (re, im) = (s.re as f64, s.im as f64);
                re * re + im * im
            })
            .sum();
        sum / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.mean_power().sqrt()
    }

    /// Serializes to the interleaved little-endian `f32` layout.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            out.extend_from_slice(&s.re.to_le_bytes());
            out.extend_from_slice(&s.im.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8], sample_rate_hz: f64) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(DpdError::config(format!(
                "I/Q byte stream length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex32::new(re, im)
            })
            .collect();
        Self::new(samples, sample_rate_hz)
    }
}

/// Contents of the sidecar file written next to an I/Q data file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqSidecar {
    pub sample_rate_hz: f64,
    pub n_samples: usize,
}

pub fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the data file and its sidecar.
pub fn write_iq(path: &Path, buf: &IqBuffer) -> Result<()> {
    fs::write(path, buf.to_le_bytes()).map_err(|e| DpdError::io(path, e))?;
    let side = IqSidecar {
        sample_rate_hz: buf.sample_rate_hz(),
        n_samples: buf.len(),
    };
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side)
        .map_err(|e| DpdError::json(side_path.display().to_string(), e))?;
    fs::write(&side_path, text).map_err(|e| DpdError::io(&side_path, e))
}

/// Reads an I/Q file. The sidecar's rate wins when present; otherwise
/// `fallback_rate_hz` is used.
pub fn read_iq(path: &Path, fallback_rate_hz: f64) -> Result<IqBuffer> {
    let bytes = fs::read(path).map_err(|e| DpdError::io(path, e))?;
    let side_path = sidecar_path(path);
    let rate = if side_path.exists() {
        let text = fs::read_to_string(&side_path).map_err(|e| DpdError::io(&side_path, e))?;
        let side: IqSidecar = serde_json::from_str(&text)
            .map_err(|e| DpdError::json(side_path.display().to_string(), e))?;
        if side.n_samples * 8 != bytes.len() {
            return Err(DpdError::config(format!(
                "{}: sidecar n_samples {} disagrees with data length {} bytes",
                path.display(),
                side.n_samples,
                bytes.len()
            )));
        }
        side.sample_rate_hz
    } else {
        fallback_rate_hz
    };
    IqBuffer::from_le_bytes(&bytes, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let r = IqBuffer::new(vec![Complex32::new(f32::NAN, 0.0)], 1.0);
        assert!(matches!(r, Err(DpdError::DegenerateInput(_))));
        let r = IqBuffer::new(vec![], 0.0);
        assert!(matches!(r, Err(DpdError::Config(_))));
    }

    #[test]
    fn byte_layout_is_interleaved_le() {
        let buf = IqBuffer::new(vec![Complex32::new(1.0, -2.0)], 1.0).unwrap();
        let bytes = buf.to_le_bytes();
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.iq");
        let buf = IqBuffer::new(
            (0..17).map(|i| Complex32::new(i as f32, -(i as f32) * 0.5)).collect(),
            61.44e6,
        )
        .unwrap();
        write_iq(&path, &buf).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 17 * 8);
        let back = read_iq(&path, 1.0).unwrap();
        assert_eq!(back, buf);
    }

    #[test]
    fn odd_byte_count_is_rejected() {
        assert!(IqBuffer::from_le_bytes(&[0u8; 12], 1.0).is_err());
    }
}
