//! Spectral and error metrics: Welch PSD, band power, spur suppression, NMSE.

use num_complex::{Complex32, Complex64};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::iq::IqBuffer;

/// Floor applied to dB conversions of zero power.
pub const DB_FLOOR: f64 = -300.0;

fn to_db(p: f64) -> f64 {
    if p > 0.0 {
        (10.0 * p.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // Periodic Hann.
            Window::Hann => (0..n)
                .map(|i| {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    0.5 - 0.5 * t.cos()
                })
                .collect(),
        }
    }
}

/// Two-sided power spectral density, DC in the middle.
///
/// `freqs_hz` runs from `-fs/2` to `fs/2 - fs/nfft`; `psd_db` is
/// `10 log10` of power per Hz relative to full scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub psd_db: Vec<f64>,
    pub nfft: usize,
    pub window: Window,
    pub overlap_fraction: f64,
    pub sample_rate_hz: f64,
    pub segments: usize,
}

impl Spectrum {
    pub fn bin_width_hz(&self) -> f64 {
        self.sample_rate_hz / self.nfft as f64
    }

    /// Sum of linear PSD times bin width over the whole span.
    pub fn total_power(&self) -> f64 {
        let df = self.bin_width_hz();
        self.psd_db.iter().map(|d| 10f64.powf(d / 10.0) * df).sum()
    }

    /// CSV with header `freq_hz,psd_db`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,psd_db\n");
        for (f, p) in self.freqs_hz.iter().zip(&self.psd_db) {
            out.push_str(&format!("{f},{p}\n"));
        }
        out
    }

    /// Shifts every bin by `db`.
    pub fn offset_db(&self, db: f64) -> Spectrum {
        Spectrum {
            psd_db: self.psd_db.iter().map(|p| p + db).collect(),
            ..self.clone()
        }
    }
}

/// Pairwise summation keeps the average independent of segment order to
/// within rounding of a balanced tree.
fn pairwise_sum(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            let (mut x, y) = (pairwise_sum(a), pairwise_sum(b));
            for (xi, yi) in x.iter_mut().zip(y) {
                *xi += yi;
            }
            x
        }
    }
}

/// Welch-averaged periodogram.
pub fn welch_psd(
    x: &IqBuffer,
    nfft: usize,
    overlap_fraction: f64,
    window: Window,
) -> Result<Spectrum> {
    if nfft < 2 {
        return Err(DpdError::config(format!("nfft must be at least 2, got {nfft}")));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DpdError::config(format!(
            "overlap fraction must be in [0, 1), got {overlap_fraction}"
        )));
    }
    if x.len() < nfft {
        return Err(DpdError::InsufficientData {
            needed: nfft,
            got: x.len(),
        });
    }
    let fs = x.sample_rate_hz();
    let w = window.coefficients(nfft);
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let hop = ((nfft as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);

    let samples = x.samples();
    let mut periodograms = Vec::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut start = 0;
    while start + nfft <= samples.len() {
        for (b, (s, wi)) in buf.iter_mut().zip(samples[start..start + nfft].iter().zip(&w)) {
            *b = Complex64::new(s.re as f64 * wi, s.im as f64 * wi);
        }
        fft.process(&mut buf);
        periodograms.push(buf.iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>());
        start += hop;
    }
    let segments = periodograms.len();
    let sum = pairwise_sum(&periodograms);
    let scale = 1.0 / (segments as f64 * fs * w_energy);

    let half = nfft / 2;
    let df = fs / nfft as f64;
    let mut freqs_hz = Vec::with_capacity(nfft);
    let mut psd_db = Vec::with_capacity(nfft);
    for i in 0..nfft {
        // Output index i holds signed bin i - nfft/2.
        let k = (i + nfft - half) % nfft;
        freqs_hz.push((i as f64 - half as f64) * df);
        psd_db.push(to_db(sum[k] * scale));
    }
    Ok(Spectrum {
        freqs_hz,
        psd_db,
        nfft,
        window,
        overlap_fraction,
        sample_rate_hz: fs,
        segments,
    })
}

fn band_linear(s: &Spectrum, f_lo: f64, f_hi: f64) -> Result<f64> {
    let half = s.sample_rate_hz / 2.0;
    if !(f_lo < f_hi) {
        return Err(DpdError::config(format!(
            "band [{f_lo}, {f_hi}) must have f_lo < f_hi"
        )));
    }
    if f_lo < -half || f_hi > half {
        return Err(DpdError::config(format!(
            "band [{f_lo}, {f_hi}) lies outside the Nyquist interval [{}, {}]",
            -half, half
        )));
    }
    let df = s.bin_width_hz();
    let mut total = 0.0;
    let mut bins = 0;
    for (f, p) in s.freqs_hz.iter().zip(&s.psd_db) {
        if *f >= f_lo && *f < f_hi {
            total += 10f64.powf(p / 10.0) * df;
            bins += 1;
        }
    }
    if bins == 0 {
        return Err(DpdError::config(format!(
            "band [{f_lo}, {f_hi}) contains no frequency bins"
        )));
    }
    Ok(total)
}

/// Power in `[f_lo, f_hi)` in dB, integrating bins whose centre falls in the band.
pub fn band_power(s: &Spectrum, f_lo: f64, f_hi: f64) -> Result<f64> {
    band_linear(s, f_lo, f_hi).map(to_db)
}

/// Per-band reduction `band_power(before) - band_power(after)` in dB.
pub fn suppression(before: &Spectrum, after: &Spectrum, bands: &[[f64; 2]]) -> Result<Vec<f64>> {
    if before.freqs_hz != after.freqs_hz {
        return Err(DpdError::config("spectra are on different frequency grids"));
    }
    bands
        .iter()
        .map(|&[lo, hi]| Ok(band_power(before, lo, hi)? - band_power(after, lo, hi)?))
        .collect()
}

/// One row of a suppression report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSuppression {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub before_db: f64,
    pub after_db: f64,
    pub suppression_db: f64,
}

pub fn suppression_report(
    before: &Spectrum,
    after: &Spectrum,
    bands: &[[f64; 2]],
) -> Result<Vec<BandSuppression>> {
    let values = suppression(before, after, bands)?;
    bands
        .iter()
        .zip(values)
        .map(|(&[lo, hi], sup)| {
            Ok(BandSuppression {
                f_lo_hz: lo,
                f_hi_hz: hi,
                before_db: band_power(before, lo, hi)?,
                after_db: band_power(after, lo, hi)?,
                suppression_db: sup,
            })
        })
        .collect()
}

/// `10 log10(sum |test - ref|^2 / sum |ref|^2)`, floored at [`DB_FLOOR`].
pub fn nmse_db(reference: &IqBuffer, test: &IqBuffer) -> Result<f64> {
    nmse_db_slices(reference.samples(), test.samples())
}

pub(crate) fn nmse_db_slices(reference: &[Complex32], test: &[Complex32]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(DpdError::config(format!(
            "length mismatch: reference {} vs test {}",
            reference.len(),
            test.len()
        )));
    }
    let mut err = 0.0f64;
    let mut pow = 0.0f64;
    for (r, t) in reference.iter().zip(test) {
        let (rr, ri) = (r.re as f64, r.im as f64);
        let (dr, di) = (t.re as f64 - rr, t.im as f64 - ri);
        err += dr * dr + di * di;
        pow += rr * rr + ri * ri;
    }
    if pow == 0.0 {
        return Err(DpdError::DegenerateInput("reference signal is all-zero".into()));
    }
    Ok(to_db(err / pow))
}
