//! The JSON experiment document that drives every command.
//!
//! Unknown keys are rejected at every level and each validation error names
//! the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::Window;
use crate::aph::AphConfig;
use crate::basis::{BasisMode, BranchSets, PolyBasis};
use crate::error::{DpdError, Result};
use crate::impairments::{IqModulatorModel, PaModel, TxChain};
use crate::iq::IqBuffer;
use crate::signal::{compose_multicarrier, normalize_power, CarrierSpec};
use crate::training::{RegressorSource, TrainingConfig, TrainingWaveform};

/// Environment variable overriding the top-level `seed`.
pub const SEED_ENV: &str = "DPD_SEED";

/// Either one tap count for every branch or one per branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Taps {
    Uniform(usize),
    PerBranch(Vec<usize>),
}

impl Taps {
    fn expand(&self, key: &str, n: usize) -> Result<Vec<usize>> {
        let v = match self {
            Taps::Uniform(t) => vec![*t; n],
            Taps::PerBranch(v) => v.clone(),
        };
        if v.len() != n {
            return Err(DpdError::config(format!(
                "dpd.{key} lists {} tap counts for {n} branches",
                v.len()
            )));
        }
        if v.contains(&0) {
            return Err(DpdError::config(format!("dpd.{key} tap counts must be >= 1")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct DpdSection {
    pub P: u32,
    pub Q: u32,
    pub L_p: Taps,
    pub L_q: Taps,
    #[serde(default = "default_basis_mode")]
    pub basis_mode: BasisMode,
}

fn default_basis_mode() -> BasisMode {
    BasisMode::Orthogonal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub n_training_samples: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub ridge_lambda: Option<f64>,
    /// Defaults to the top-level seed plus one.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub regressor: RegressorSource,
}

fn default_iterations() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_nfft")]
    pub nfft: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_window")]
    pub window: Window,
    /// `[f_lo, f_hi]` pairs in Hz, evaluated as `[f_lo, f_hi)`.
    #[serde(default)]
    pub bands: Vec<[f64; 2]>,
}

fn default_nfft() -> usize {
    4096
}

fn default_overlap() -> f64 {
    0.5
}

fn default_window() -> Window {
    Window::Hann
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sample_rate_hz: f64,
    /// Payload length written by `generate`.
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    pub drive_rms: f64,
    pub carriers: Vec<CarrierSpec>,
    pub dpd: DpdSection,
    pub training: TrainingSection,
    pub pa: PaModel,
    pub iq_modulator: IqModulatorModel,
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| DpdError::json("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DpdError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| DpdError::json(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `DPD_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| DpdError::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.sample_rate_hz;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(DpdError::config("sample_rate_hz must be positive"));
        }
        if self.n_samples == 0 {
            return Err(DpdError::config("n_samples must be positive"));
        }
        if !(self.drive_rms.is_finite() && self.drive_rms > 0.0) {
            return Err(DpdError::config("drive_rms must be positive"));
        }
        if self.carriers.is_empty() {
            return Err(DpdError::config("carriers must not be empty"));
        }
        for (i, c) in self.carriers.iter().enumerate() {
            c.validate(fs)
                .map_err(|e| DpdError::config(format!("carriers[{i}]: {e}")))?;
        }
        let sets = self.branch_sets()?;
        self.dpd.L_p.expand("L_p", sets.main().len())?;
        self.dpd.L_q.expand("L_q", sets.conj().len())?;
        self.pa
            .validate()
            .map_err(|e| DpdError::config(format!("pa: {e}")))?;
        self.iq_modulator
            .validate()
            .map_err(|e| DpdError::config(format!("iq_modulator: {e}")))?;
        if self.training.iterations == 0 {
            return Err(DpdError::config("training.iterations must be at least 1"));
        }
        if let Some(l) = self.training.ridge_lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(DpdError::config("training.ridge_lambda must be non-negative"));
            }
        }
        let a = &self.analysis;
        if a.nfft < 2 {
            return Err(DpdError::config("analysis.nfft must be at least 2"));
        }
        if !(0.0..1.0).contains(&a.overlap) {
            return Err(DpdError::config("analysis.overlap must be in [0, 1)"));
        }
        for (i, &[lo, hi]) in a.bands.iter().enumerate() {
            if !(lo < hi) || lo < -fs / 2.0 || hi > fs / 2.0 {
                return Err(DpdError::config(format!(
                    "analysis.bands[{i}] = [{lo}, {hi}] must be ascending and inside [-{0}, {0}]",
                    fs / 2.0
                )));
            }
        }
        Ok(())
    }

    pub fn branch_sets(&self) -> Result<BranchSets> {
        BranchSets::odd_up_to(self.dpd.P, self.dpd.Q)
            .map_err(|e| DpdError::config(format!("dpd.P/dpd.Q: {e}")))
    }

    pub fn training_seed(&self) -> u64 {
        self.training.seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn tx_chain(&self) -> TxChain {
        TxChain::new(self.iq_modulator, self.pa)
    }

    pub fn training_waveform(&self) -> TrainingWaveform {
        TrainingWaveform {
            carriers: self.carriers.clone(),
            sample_rate_hz: self.sample_rate_hz,
            drive_rms: self.drive_rms,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            n_training_samples: self.training.n_training_samples,
            iterations: self.training.iterations,
            ridge_lambda: self.training.ridge_lambda,
            seed: self.training_seed(),
            regressor: self.training.regressor,
            waveform: self.training_waveform(),
        }
    }

    /// Predistorter layout with the plain basis (no data needed).
    pub fn plain_aph_config(&self) -> Result<AphConfig> {
        self.aph_config_with(PolyBasis::plain(self.branch_sets()?))
    }

    pub fn aph_config_with(&self, basis: PolyBasis) -> Result<AphConfig> {
        let sets = basis.sets().clone();
        AphConfig::new(
            basis,
            self.dpd.L_p.expand("L_p", sets.main().len())?,
            self.dpd.L_q.expand("L_q", sets.conj().len())?,
        )
    }

    /// Predistorter layout for training. In orthogonal mode the basis is
    /// fitted on the first training waveform.
    pub fn aph_config(&self) -> Result<AphConfig> {
        let sets = self.branch_sets()?;
        let basis = match self.dpd.basis_mode {
            BasisMode::Plain => PolyBasis::plain(sets),
            BasisMode::Orthogonal => {
                let tcfg = self.training_config();
                let y = tcfg
                    .waveform
                    .generate(tcfg.n_training_samples, tcfg.iteration_seed(1))?;
                PolyBasis::for_mode(BasisMode::Orthogonal, sets, &y)?
            }
        };
        self.aph_config_with(basis)
    }

    /// Checks that a trained predistorter has this document's structure.
    pub fn check_layout(&self, cfg: &AphConfig) -> Result<()> {
        let want = self.plain_aph_config()?.layout();
        if cfg.layout() != want {
            return Err(DpdError::config(format!(
                "coefficient layout {:?} does not match dpd section {:?}",
                cfg.layout(),
                want
            )));
        }
        Ok(())
    }

    /// The payload waveform at the configured drive level.
    pub fn payload(&self) -> Result<IqBuffer> {
        let raw = compose_multicarrier(&self.carriers, self.n_samples, self.sample_rate_hz, self.seed)?;
        normalize_power(&raw, self.drive_rms)
    }
}
