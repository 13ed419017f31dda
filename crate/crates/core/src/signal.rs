//! Test waveform synthesis: band-limited random-QAM multitones and
//! non-contiguous carrier aggregates.
//!
//! A carrier is built in the frequency domain as one long OFDM symbol whose
//! occupied subcarriers carry random 16-QAM symbols, then frequency shifted to
//! its offset. Because the whole buffer is a single symbol there are no
//! symbol-boundary discontinuities, so the out-of-band floor is set by the
//! analysis window rather than by the generator.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::iq::IqBuffer;

/// One component carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierSpec {
    pub center_offset_hz: f64,
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub power_db: f64,
}

impl CarrierSpec {
    pub fn new(center_offset_hz: f64, bandwidth_hz: f64, power_db: f64) -> Self {
        Self {
            center_offset_hz,
            bandwidth_hz,
            power_db,
        }
    }

    /// Checks that the occupied band fits inside the Nyquist interval.
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(DpdError::config(format!(
                "sample_rate_hz must be positive, got {sample_rate_hz}"
            )));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(DpdError::config(format!(
                "carrier bandwidth_hz must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if !self.center_offset_hz.is_finite() || !self.power_db.is_finite() {
            return Err(DpdError::config("carrier center_offset_hz/power_db must be finite"));
        }
        let edge = self.center_offset_hz.abs() + self.bandwidth_hz / 2.0;
        if edge > sample_rate_hz / 2.0 {
            return Err(DpdError::config(format!(
                "carrier at {} Hz with bandwidth {} Hz exceeds Nyquist ({} Hz)",
                self.center_offset_hz,
                self.bandwidth_hz,
                sample_rate_hz / 2.0
            )));
        }
        Ok(())
    }
}

const QAM16_LEVELS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];

fn qam16(rng: &mut ChaCha8Rng) -> Complex64 {
    let re = QAM16_LEVELS[rng.random_range(0..4)];
    let im = QAM16_LEVELS[rng.random_range(0..4)];
    Complex64::new(re, im) / 10f64.sqrt()
}

/// Synthesizes one carrier of `n_samples` at `sample_rate_hz`.
///
/// The output has mean power `10^(power_db/10)` and is bit-identical for a
/// given `(spec, n_samples, sample_rate_hz, seed)`.
pub fn generate_carrier(
    spec: &CarrierSpec,
    n_samples: usize,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<IqBuffer> {
    if n_samples == 0 {
        return Err(DpdError::config("n_samples must be positive"));
    }
    spec.validate(sample_rate_hz)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_samples;
    let bin_hz = sample_rate_hz / n as f64;
    let half_bw = spec.bandwidth_hz / 2.0;

    let mut grid = vec![Complex64::new(0.0, 0.0); n];
    for (k, slot) in grid.iter_mut().enumerate() {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        if (signed * bin_hz).abs() <= half_bw {
            *slot = qam16(&mut rng);
        }
    }

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    ifft.process(&mut grid);

    let power = grid.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
    if power <= 0.0 {
        return Err(DpdError::DegenerateInput("carrier occupies no subcarriers".into()));
    }
    let scale = 10f64.powf(spec.power_db / 20.0) / power.sqrt();

    let step = 2.0 * PI * spec.center_offset_hz / sample_rate_hz;
    let mut phase = 0.0f64;
    let samples = grid
        .iter()
        .map(|c| {
            let rot = Complex64::from_polar(1.0, phase);
            phase = (phase + step).rem_euclid(2.0 * PI);
            let v = c * rot * scale;
            Complex32::new(v.re as f32, v.im as f32)
        })
        .collect();
    IqBuffer::new(samples, sample_rate_hz)
}

/// Seed for the `index`-th carrier of an aggregate; index 0 keeps `seed`.
fn carrier_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Sums independently generated carriers and renormalizes to unit mean power.
pub fn compose_multicarrier(
    specs: &[CarrierSpec],
    n_samples: usize,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<IqBuffer> {
    if specs.is_empty() {
        return Err(DpdError::config("carrier list is empty"));
    }
    for spec in specs {
        spec.validate(sample_rate_hz)?;
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); n_samples];
    for (i, spec) in specs.iter().enumerate() {
        let c = generate_carrier(spec, n_samples, sample_rate_hz, carrier_seed(seed, i))?;
        for (a, s) in acc.iter_mut().zip(c.samples()) {
            *a += Complex64::new(s.re as f64, s.im as f64);
        }
    }
    let power = acc.iter().map(|c| c.norm_sqr()).sum::<f64>() / n_samples as f64;
    if power <= 0.0 {
        return Err(DpdError::DegenerateInput("composed waveform is all-zero".into()));
    }
    let scale = power.sqrt().recip();
    let samples = acc
        .iter()
        .map(|c| Complex32::new((c.re * scale) as f32, (c.im * scale) as f32))
        .collect();
    IqBuffer::new(samples, sample_rate_hz)
}

/// Scales `buf` so its RMS equals `target_rms`.
pub fn normalize_power(buf: &IqBuffer, target_rms: f64) -> Result<IqBuffer> {
    if buf.is_empty() {
        return Err(DpdError::DegenerateInput("cannot normalize an empty buffer".into()));
    }
    if !(target_rms.is_finite() && target_rms > 0.0) {
        return Err(DpdError::config(format!(
            "target_rms must be positive, got {target_rms}"
        )));
    }
    let rms = buf.rms();
    if rms == 0.0 {
        return Err(DpdError::DegenerateInput("cannot normalize an all-zero buffer".into()));
    }
    let scale = target_rms / rms;
    let samples = buf
        .samples()
        .iter()
        .map(|s| Complex32::new((s.re as f64 * scale) as f32, (s.im as f64 * scale) as f32))
        .collect();
    IqBuffer::new(samples, buf.sample_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 61.44e6;

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = CarrierSpec::new(0.0, FS / 4.0, 0.0);
        let a = generate_carrier(&spec, 4096, FS, 11).unwrap();
        let b = generate_carrier(&spec, 4096, FS, 11).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = generate_carrier(&spec, 4096, FS, 12).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn nyquist_violation_is_config_error() {
        let spec = CarrierSpec::new(FS, 1.0, 0.0);
        assert!(matches!(
            generate_carrier(&spec, 4096, FS, 0),
            Err(DpdError::Config(_))
        ));
    }

    #[test]
    fn unit_power_before_scaling() {
        let spec = CarrierSpec::new(2e6, 3e6, 0.0);
        let buf = generate_carrier(&spec, 8192, FS, 3).unwrap();
        assert!((buf.mean_power() - 1.0).abs() < 1e-5);
        let spec = CarrierSpec::new(2e6, 3e6, -6.0);
        let buf = generate_carrier(&spec, 8192, FS, 3).unwrap();
        assert!((10.0 * buf.mean_power().log10() + 6.0).abs() < 1e-4);
    }

    #[test]
    fn papr_is_realistic() {
        let spec = CarrierSpec::new(0.0, 10e6, 0.0);
        let buf = generate_carrier(&spec, 200_000, FS, 5).unwrap();
        let peak = buf
            .samples()
            .iter()
            .map(|s| s.norm_sqr() as f64)
            .fold(0.0, f64::max);
        let papr_db = 10.0 * (peak / buf.mean_power()).log10();
        assert!((8.0..13.0).contains(&papr_db), "papr {papr_db}");
    }

    #[test]
    fn empty_carrier_list_is_rejected() {
        assert!(matches!(
            compose_multicarrier(&[], 1024, FS, 0),
            Err(DpdError::Config(_))
        ));
    }

    #[test]
    fn single_carrier_compose_matches_generate() {
        let spec = CarrierSpec::new(1e6, 5e6, -3.0);
        let one = generate_carrier(&spec, 4096, FS, 9).unwrap();
        let comp = compose_multicarrier(&[spec], 4096, FS, 9).unwrap();
        let one = normalize_power(&one, 1.0).unwrap();
        for (a, b) in one.samples().iter().zip(comp.samples()) {
            assert!((a - b).norm() < 1e-5);
        }
    }

    #[test]
    fn composed_power_is_unity() {
        let specs = [
            CarrierSpec::new(-5e6, 3e6, 0.0),
            CarrierSpec::new(5e6, 3e6, -2.0),
        ];
        let buf = compose_multicarrier(&specs, 20_000, FS, 1).unwrap();
        assert!((buf.mean_power() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn normalize_halves_rms_two() {
        let samples: Vec<_> = [2.0f32, -2.0, 2.0, -2.0]
            .iter()
            .map(|&v| Complex32::new(v, 0.0))
            .collect();
        let buf = IqBuffer::new(samples, 1.0).unwrap();
        let out = normalize_power(&buf, 1.0).unwrap();
        for (a, b) in buf.samples().iter().zip(out.samples()) {
            assert_eq!(*b, a * 0.5);
        }
    }

    #[test]
    fn normalize_identity_within_ulp() {
        let spec = CarrierSpec::new(0.0, 5e6, 0.0);
        let buf = generate_carrier(&spec, 4096, FS, 2).unwrap();
        let out = normalize_power(&buf, buf.rms()).unwrap();
        for (a, b) in buf.samples().iter().zip(out.samples()) {
            for (x, y) in [(a.re, b.re), (a.im, b.im)] {
                let ulps = (x.to_bits() as i64 - y.to_bits() as i64).abs();
                assert!(ulps <= 1, "{x} vs {y}");
            }
        }
        let rms_err = (out.rms() / buf.rms() - 1.0).abs();
        assert!(rms_err < 1e-6);
    }

    #[test]
    fn normalize_rejects_zero_buffer() {
        let buf = IqBuffer::zeros(16, 1.0).unwrap();
        assert!(matches!(
            normalize_power(&buf, 1.0),
            Err(DpdError::DegenerateInput(_))
        ));
    }
}
