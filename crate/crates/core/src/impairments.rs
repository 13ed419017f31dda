//! Simulated transmitter: I/Q modulator imbalance with LO leakage, followed by
//! a memoryless odd-order polynomial power amplifier.

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::iq::IqBuffer;

/// `out = a1 x + a3 |x|^2 x + a5 |x|^4 x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaModel {
    pub alpha1: Complex64,
    pub alpha3: Complex64,
    pub alpha5: Complex64,
}

impl PaModel {
    pub fn new(alpha1: Complex64, alpha3: Complex64, alpha5: Complex64) -> Result<Self> {
        let pa = Self {
            alpha1,
            alpha3,
            alpha5,
        };
        pa.validate()?;
        Ok(pa)
    }

    /// Fifth-order fit of a measured handset PA.
    pub fn nominal() -> Self {
        Self {
            alpha1: Complex64::new(0.9490, -0.0197),
            alpha3: Complex64::new(0.4885, 0.1071),
            alpha5: Complex64::new(-1.0156, -0.0474),
        }
    }

    pub fn linear(gain: Complex64) -> Result<Self> {
        Self::new(gain, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha3, self.alpha5];
        if all.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(DpdError::config("pa coefficients must be finite"));
        }
        if self.alpha1 == Complex64::new(0.0, 0.0) {
            return Err(DpdError::config("pa.alpha1 must be non-zero"));
        }
        Ok(())
    }
}

pub fn pa_evaluate(x: Complex64, pa: &PaModel) -> Complex64 {
    let r2 = x.norm_sqr();
    x * (pa.alpha1 + pa.alpha3 * r2 + pa.alpha5 * r2 * r2)
}

/// Gain/phase imbalance and carrier feedthrough of a direct-conversion
/// modulator: `out = K1 x + K2 x* + lo_leakage`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqModulatorModel {
    pub gain_imbalance_db: f64,
    pub phase_imbalance_deg: f64,
    pub lo_leakage: Complex64,
}

impl IqModulatorModel {
    pub fn ideal() -> Self {
        Self {
            gain_imbalance_db: 0.0,
            phase_imbalance_deg: 0.0,
            lo_leakage: Complex64::new(0.0, 0.0),
        }
    }

    /// 1 dB / 5 degrees imbalance and leakage 30 dB below `signal_rms`.
    pub fn default_impairments(signal_rms: f64) -> Self {
        Self {
            gain_imbalance_db: 1.0,
            phase_imbalance_deg: 5.0,
            lo_leakage: Complex64::new(signal_rms * 10f64.powf(-30.0 / 20.0), 0.0),
        }
    }

    /// `(K1, K2) = ((1 + g e^{j phi}) / 2, (1 - g e^{j phi}) / 2)`.
    pub fn mixing_terms(&self) -> (Complex64, Complex64) {
        let g = 10f64.powf(self.gain_imbalance_db / 20.0);
        let ge = Complex64::from_polar(g, self.phase_imbalance_deg.to_radians());
        ((1.0 + ge) / 2.0, (1.0 - ge) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.gain_imbalance_db.is_finite()
            && self.phase_imbalance_deg.is_finite()
            && self.lo_leakage.re.is_finite()
            && self.lo_leakage.im.is_finite();
        if !finite {
            return Err(DpdError::config("iq_modulator parameters must be finite"));
        }
        Ok(())
    }
}

pub fn iq_modulate(x: Complex64, m: &IqModulatorModel) -> Complex64 {
    let (k1, k2) = m.mixing_terms();
    k1 * x + k2 * x.conj() + m.lo_leakage
}

/// Modulator then PA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxChain {
    pub modulator: IqModulatorModel,
    pub pa: PaModel,
}

impl TxChain {
    pub fn new(modulator: IqModulatorModel, pa: PaModel) -> Self {
        Self { modulator, pa }
    }

    #[inline]
    pub fn apply(&self, x: Complex64) -> Complex64 {
        pa_evaluate(iq_modulate(x, &self.modulator), &self.pa)
    }
}

/// Passes every sample through the chain. Intermediate math is in double
/// precision; a non-finite output is reported as degenerate input.
pub fn run_tx_chain(x: &IqBuffer, chain: &TxChain) -> Result<IqBuffer> {
    let samples = x
        .samples()
        .iter()
        .map(|s| {
            let y = chain.apply(Complex64::new(s.re as f64, s.im as f64));
            Complex32::new(y.re as f32, y.im as f32)
        })
        .collect();
    IqBuffer::new(samples, x.sample_rate_hz())
}
