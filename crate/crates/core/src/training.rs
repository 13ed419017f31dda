//! Indirect-learning training of the predistorter.
//!
//! Each iteration drives a fresh training waveform through the current
//! predistorter and the simulated transmitter, normalizes the PA output by
//! the linear gain `G`, and fits a postdistorter from that feedback to the
//! predistorter output by regularized least squares. The fitted
//! postdistorter becomes the next predistorter.

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::analysis::nmse_db_slices;
use crate::aph::{predistort_serial, AphConfig, CoefficientVector};
use crate::basis::{build_basis_matrix_f64, BasisMatrix};
use crate::error::{DpdError, Result};
use crate::impairments::{run_tx_chain, TxChain};
use crate::iq::IqBuffer;
use crate::linalg::qr_least_squares;
use crate::signal::{compose_multicarrier, normalize_power, CarrierSpec};

/// `cond(R)` above which an unregularized problem is declared singular.
const SINGULAR_R_CONDITION: f64 = 1e12;
/// Relative ridge used when none is configured: `lambda = this * trace(Psi^H Psi) / cols`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-10;

/// Least-squares gain `<pa_in, pa_out> / <pa_in, pa_in>`.
pub fn estimate_gain(pa_in: &IqBuffer, pa_out: &IqBuffer) -> Result<Complex64> {
    if pa_in.len() != pa_out.len() {
        return Err(DpdError::config(format!(
            "gain estimation needs equal lengths, got {} and {}",
            pa_in.len(),
            pa_out.len()
        )));
    }
    if pa_in.is_empty() {
        return Err(DpdError::DegenerateInput("gain estimation on empty buffers".into()));
    }
    let mut cross = Complex64::new(0.0, 0.0);
    let mut energy = 0.0f64;
    for (a, b) in pa_in.samples().iter().zip(pa_out.samples()) {
        let a = Complex64::new(a.re as f64, a.im as f64);
        let b = Complex64::new(b.re as f64, b.im as f64);
        cross += a.conj() * b;
        energy += a.norm_sqr();
    }
    if energy == 0.0 {
        return Err(DpdError::DegenerateInput("PA input is all-zero".into()));
    }
    Ok(cross / energy)
}

/// Output of [`ls_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    /// Double-precision solution, same layout as the matrix columns.
    pub coefficients: Vec<Complex64>,
    pub ridge_lambda: f64,
    /// `||Psi h - z||`.
    pub residual_norm: f64,
    /// Estimate of `cond(Psi^H Psi + lambda I)`, from the diagonal of `R`.
    pub condition_estimate: f64,
}

impl LsSolution {
    pub fn to_coefficients(&self) -> Result<CoefficientVector> {
        CoefficientVector::from_f64(&self.coefficients)
    }
}

/// `lambda = scale * trace(Psi^H Psi) / cols`.
pub fn relative_ridge(psi: &BasisMatrix, scale: f64) -> f64 {
    let trace: f64 = (0..psi.cols())
        .map(|c| psi.column(c).iter().map(|v| v.norm_sqr()).sum::<f64>())
        .sum();
    scale * trace / psi.cols() as f64
}

/// Minimizes `||Psi h - z||^2 + lambda ||h||^2` via QR of the stacked
/// system `[Psi; sqrt(lambda) I] h = [z; 0]`.
pub fn ls_solve(psi: &BasisMatrix, target: &[Complex64], ridge_lambda: f64) -> Result<LsSolution> {
    let (rows, cols) = (psi.rows(), psi.cols());
    if !(ridge_lambda.is_finite() && ridge_lambda >= 0.0) {
        return Err(DpdError::config(format!(
            "ridge_lambda must be non-negative, got {ridge_lambda}"
        )));
    }
    if rows < cols {
        return Err(DpdError::InsufficientData {
            needed: cols,
            got: rows,
        });
    }
    if target.len() != rows {
        return Err(DpdError::config(format!(
            "target has {} entries, matrix has {rows} rows",
            target.len()
        )));
    }

    let total = rows + cols;
    let mut a = vec![Complex64::new(0.0, 0.0); total * cols];
    let root = ridge_lambda.sqrt();
    for c in 0..cols {
        a[c * total..c * total + rows].copy_from_slice(psi.column(c));
        a[c * total + rows + c] = Complex64::new(root, 0.0);
    }
    let mut b = vec![Complex64::new(0.0, 0.0); total];
    b[..rows].copy_from_slice(target);

    let singular = |condition: f64| DpdError::Conditioning {
        what: "least-squares normal matrix is numerically singular".into(),
        condition,
    };
    let sol = qr_least_squares(&mut a, total, cols, &mut b).ok_or_else(|| singular(f64::INFINITY))?;
    let condition = sol.r_condition * sol.r_condition;
    if !sol.r_condition.is_finite() || (ridge_lambda == 0.0 && sol.r_condition > SINGULAR_R_CONDITION)
    {
        return Err(singular(condition));
    }

    let fitted = psi.mul_vec(&sol.x);
    let residual_norm = fitted
        .iter()
        .zip(target)
        .map(|(f, t)| (f - t).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(LsSolution {
        coefficients: sol.x,
        ridge_lambda,
        residual_norm,
        condition_estimate: condition,
    })
}

/// Which samples feed the regression matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorSource {
    /// Gain-normalized PA output (postdistorter learning).
    #[default]
    Feedback,
    /// The training input `y` itself; kept for comparison only.
    Input,
}

/// Waveform class drawn for every training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingWaveform {
    pub carriers: Vec<CarrierSpec>,
    pub sample_rate_hz: f64,
    pub drive_rms: f64,
}

impl TrainingWaveform {
    /// `n` samples at the configured drive level.
    pub fn generate(&self, n: usize, seed: u64) -> Result<IqBuffer> {
        let raw = compose_multicarrier(&self.carriers, n, self.sample_rate_hz, seed)?;
        normalize_power(&raw, self.drive_rms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub n_training_samples: usize,
    pub iterations: usize,
    /// `None` selects [`DEFAULT_RIDGE_SCALE`] relative to the Gram trace.
    pub ridge_lambda: Option<f64>,
    pub seed: u64,
    pub regressor: RegressorSource,
    pub waveform: TrainingWaveform,
}

impl TrainingConfig {
    pub fn validate(&self, cfg: &AphConfig) -> Result<()> {
        let needed = 10 * cfg.n_coefficients();
        if self.n_training_samples < needed {
            return Err(DpdError::config(format!(
                "training.n_training_samples = {} is below 10x the {} coefficients",
                self.n_training_samples,
                cfg.n_coefficients()
            )));
        }
        if self.iterations == 0 {
            return Err(DpdError::config("training.iterations must be at least 1"));
        }
        if let Some(l) = self.ridge_lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(DpdError::config("training.ridge_lambda must be non-negative"));
            }
        }
        if !(self.waveform.drive_rms.is_finite() && self.waveform.drive_rms > 0.0) {
            return Err(DpdError::config("drive_rms must be positive"));
        }
        Ok(())
    }

    /// Seed of the training waveform for 1-based iteration `i`.
    pub fn iteration_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    /// Seed of the held-out waveform used to score every iteration.
    pub fn validation_seed(&self) -> u64 {
        self.seed ^ 0x5DEE_CE66_D1CE_4E5B
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub coefficients: Vec<Complex32>,
    /// PA output vs `G * x` on a held-out waveform, with this iteration's
    /// coefficients in place.
    pub nmse_db: f64,
    pub residual_norm: f64,
    pub condition_estimate: f64,
    pub ridge_lambda: f64,
    pub gain: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub gain: Complex64,
    /// NMSE of the chain with no predistortion, same held-out waveform.
    pub baseline_nmse_db: f64,
    pub iterations: Vec<IterationRecord>,
}

impl TrainingReport {
    /// JSON array of per-iteration records.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.iterations).map_err(|e| DpdError::json("report", e))
    }

    pub fn nmse_trace(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.nmse_db).collect()
    }
}

fn diverged(what: &str, e: DpdError) -> DpdError {
    match e {
        DpdError::DegenerateInput(msg) => {
            DpdError::Divergence(format!("{what}: {msg} (drive level too high?)"))
        }
        other => other,
    }
}

/// Linearization NMSE of `chain` preceded by `coeffs`, against `gain * x`.
fn linearization_nmse(
    x: &IqBuffer,
    coeffs: &CoefficientVector,
    cfg: &AphConfig,
    chain: &TxChain,
    gain: Complex64,
) -> Result<f64> {
    let z = predistort_serial(x, coeffs, cfg).map_err(|e| diverged("predistorter output", e))?;
    let s = run_tx_chain(&z, chain).map_err(|e| diverged("validation PA output", e))?;
    let g = Complex32::new(gain.re as f32, gain.im as f32);
    let reference: Vec<Complex32> = x.samples().iter().map(|v| v * g).collect();
    nmse_db_slices(&reference, s.samples())
}

/// Runs the indirect-learning loop. Returns the final coefficients and a
/// per-iteration report.
pub fn ila_train(
    chain: &TxChain,
    cfg: &AphConfig,
    tcfg: &TrainingConfig,
) -> Result<(CoefficientVector, TrainingReport)> {
    tcfg.validate(cfg)?;
    let m = tcfg.n_training_samples;
    let validation = tcfg.waveform.generate(m, tcfg.validation_seed())?;

    let mut coeffs = CoefficientVector::identity(cfg);
    let mut gain: Option<Complex64> = None;
    let mut baseline = None;
    let mut records = Vec::with_capacity(tcfg.iterations);

    for i in 1..=tcfg.iterations {
        let y = tcfg.waveform.generate(m, tcfg.iteration_seed(i))?;
        let z = predistort_serial(&y, &coeffs, cfg).map_err(|e| diverged("predistorter output", e))?;
        let s = run_tx_chain(&z, chain).map_err(|e| diverged("feedback", e))?;

        let g = match gain {
            Some(g) => g,
            None => {
                let g = estimate_gain(&z, &s)?;
                if g.norm() == 0.0 || !g.norm().is_finite() {
                    return Err(DpdError::Divergence(format!("estimated PA gain {g} is unusable")));
                }
                baseline = Some(linearization_nmse(&validation, &coeffs, cfg, chain, g)?);
                gain = Some(g);
                g
            }
        };

        let regressors: Vec<Complex64> = match tcfg.regressor {
            RegressorSource::Feedback => s
                .samples()
                .iter()
                .map(|v| Complex64::new(v.re as f64, v.im as f64) / g)
                .collect(),
            RegressorSource::Input => y
                .samples()
                .iter()
                .map(|v| Complex64::new(v.re as f64, v.im as f64))
                .collect(),
        };
        let psi = build_basis_matrix_f64(&regressors, cfg.basis(), cfg.taps_main(), cfg.taps_conj())?;
        let mut target: Vec<Complex64> = z
            .samples()
            .iter()
            .map(|v| Complex64::new(v.re as f64, v.im as f64))
            .collect();
        target.resize(psi.rows(), Complex64::new(0.0, 0.0));

        let lambda = tcfg
            .ridge_lambda
            .unwrap_or_else(|| relative_ridge(&psi, DEFAULT_RIDGE_SCALE));
        let sol = ls_solve(&psi, &target, lambda)?;
        coeffs = sol.to_coefficients().map_err(|_| {
            DpdError::Divergence(format!("iteration {i} produced non-finite coefficients"))
        })?;

        let nmse = linearization_nmse(&validation, &coeffs, cfg, chain, g)?;
        records.push(IterationRecord {
            iteration: i,
            coefficients: coeffs.as_slice().to_vec(),
            nmse_db: nmse,
            residual_norm: sol.residual_norm,
            condition_estimate: sol.condition_estimate,
            ridge_lambda: lambda,
            gain: g,
        });
    }

    Ok((
        coeffs,
        TrainingReport {
            gain: gain.unwrap(),
            baseline_nmse_db: baseline.unwrap(),
            iterations: records,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis_matrix, BranchSets, PolyBasis};
    use crate::impairments::{IqModulatorModel, PaModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_buffer(n: usize, seed: u64, scale: f32) -> IqBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        IqBuffer::new(
            (0..n)
                .map(|_| {
                    Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
                })
                .collect(),
            1.0,
        )
        .unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gain_of_scaled_copies() {
        let x = random_buffer(500, 1, 0.5);
        for g in [c(2.0, 0.0), c(0.0, 1.0)] {
            let y = IqBuffer::new(
                x.samples()
                    .iter()
                    .map(|v| v * Complex32::new(g.re as f32, g.im as f32))
                    .collect(),
                1.0,
            )
            .unwrap();
            let est = estimate_gain(&x, &y).unwrap();
            assert!((est - g).norm() < 1e-12, "{est}");
        }
    }

    #[test]
    fn gain_rejects_zero_input() {
        let z = IqBuffer::zeros(10, 1.0).unwrap();
        let x = random_buffer(10, 1, 0.5);
        assert!(matches!(estimate_gain(&z, &x), Err(DpdError::DegenerateInput(_))));
        assert!(estimate_gain(&x, &random_buffer(9, 1, 0.5)).is_err());
    }

    #[test]
    fn gain_near_alpha1_at_low_drive() {
        let pa = PaModel::nominal();
        let chain = TxChain::new(IqModulatorModel::ideal(), pa);
        let x = normalize_power(&random_buffer(20_000, 2, 1.0), 0.1).unwrap();
        let y = run_tx_chain(&x, &chain).unwrap();
        let g = estimate_gain(&x, &y).unwrap();
        // Direct double-precision LS oracle on the same data.
        let (mut num, mut den) = (c(0.0, 0.0), 0.0);
        for (a, b) in x.samples().iter().zip(y.samples()) {
            let a = c(a.re as f64, a.im as f64);
            let b = c(b.re as f64, b.im as f64);
            num += a.conj() * b;
            den += a.norm_sqr();
        }
        assert!((g - num / den).norm() < 1e-12);
        assert!((g - pa.alpha1).norm() / pa.alpha1.norm() < 0.02);
    }

    #[test]
    fn identity_matrix_returns_target() {
        let n = 6;
        let cols: Vec<Vec<Complex64>> = (0..n)
            .map(|j| (0..n).map(|i| c(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        let psi = BasisMatrix::from_columns(n, cols).unwrap();
        let z: Vec<_> = (0..n).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        let sol = ls_solve(&psi, &z, 0.0).unwrap();
        for (a, b) in sol.coefficients.iter().zip(&z) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    fn random_standard_matrix(seed: u64) -> BasisMatrix {
        let y = random_buffer(1000, seed, 0.7);
        build_basis_matrix(&y, &PolyBasis::plain(BranchSets::odd_up_to(5, 3).unwrap()), &[5; 3], &[5; 2])
            .unwrap()
    }

    #[test]
    fn consistent_system_is_recovered() {
        let psi = random_standard_matrix(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h0: Vec<_> = (0..psi.cols())
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let z = psi.mul_vec(&h0);
        let sol = ls_solve(&psi, &z, 0.0).unwrap();
        let err: f64 = sol
            .coefficients
            .iter()
            .zip(&h0)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let norm: f64 = h0.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 1e-6, "{}", err / norm);
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let psi = random_standard_matrix(5);
        let z: Vec<_> = (0..psi.rows()).map(|i| c((i as f64 * 0.1).sin(), 0.2)).collect();
        let free = ls_solve(&psi, &z, 0.0).unwrap();
        let max_diag = (0..psi.cols())
            .map(|j| psi.column(j).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .fold(0.0, f64::max);
        let shrunk = ls_solve(&psi, &z, 1e6 * max_diag).unwrap();
        let norm = |v: &[Complex64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!(norm(&shrunk.coefficients) < 1e-3 * norm(&free.coefficients));
    }

    #[test]
    fn rank_deficient_without_ridge_is_error() {
        let col: Vec<_> = (0..50).map(|i| c(i as f64, 1.0)).collect();
        let psi = BasisMatrix::from_columns(50, vec![col.clone(), col]).unwrap();
        let z = vec![c(1.0, 0.0); 50];
        match ls_solve(&psi, &z, 0.0) {
            Err(DpdError::Conditioning { condition, .. }) => assert!(condition > 1e20),
            other => panic!("expected conditioning error, got {other:?}"),
        }
        assert!(ls_solve(&psi, &z, 1e-3).is_ok());
    }

    #[test]
    fn normal_equation_residual() {
        let psi = random_standard_matrix(6);
        let z: Vec<_> = (0..psi.rows()).map(|i| c((i as f64 * 0.37).cos(), (i as f64 * 0.11).sin())).collect();
        for lambda in [0.0, relative_ridge(&psi, 1e-4)] {
            let sol = ls_solve(&psi, &z, lambda).unwrap();
            let r: Vec<_> = psi.mul_vec(&sol.coefficients).iter().zip(&z).map(|(a, b)| a - b).collect();
            let mut grad_norm = 0.0;
            let mut rhs_norm = 0.0;
            for j in 0..psi.cols() {
                let col = psi.column(j);
                let g: Complex64 = col.iter().zip(&r).map(|(p, e)| p.conj() * e).sum::<Complex64>()
                    + sol.coefficients[j] * lambda;
                let b: Complex64 = col.iter().zip(&z).map(|(p, e)| p.conj() * e).sum();
                grad_norm += g.norm_sqr();
                rhs_norm += b.norm_sqr();
            }
            assert!(grad_norm.sqrt() <= 1e-4 * rhs_norm.sqrt());
        }
    }

    fn waveform(drive: f64) -> TrainingWaveform {
        TrainingWaveform {
            carriers: vec![CarrierSpec::new(0.0, 10e6, 0.0)],
            sample_rate_hz: 61.44e6,
            drive_rms: drive,
        }
    }

    #[test]
    fn linear_chain_trains_to_identity() {
        let cfg = AphConfig::standard_plain();
        let chain = TxChain::new(IqModulatorModel::ideal(), PaModel::linear(c(0.9, -0.1)).unwrap());
        let tcfg = TrainingConfig {
            n_training_samples: 4000,
            iterations: 2,
            ridge_lambda: None,
            seed: 1,
            regressor: RegressorSource::Feedback,
            waveform: waveform(0.5),
        };
        let (coeffs, report) = ila_train(&chain, &cfg, &tcfg).unwrap();
        let ident = CoefficientVector::identity(&cfg).to_f64();
        let err: f64 = coeffs
            .to_f64()
            .iter()
            .zip(&ident)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-3, "{err}");
        assert_eq!(report.iterations.len(), 2);
        assert!((report.gain - c(0.9, -0.1)).norm() < 1e-6);
    }

    #[test]
    fn too_few_training_samples() {
        let cfg = AphConfig::standard_plain();
        let chain = TxChain::new(IqModulatorModel::ideal(), PaModel::nominal());
        let tcfg = TrainingConfig {
            n_training_samples: 259,
            iterations: 1,
            ridge_lambda: None,
            seed: 1,
            regressor: RegressorSource::Feedback,
            waveform: waveform(0.5),
        };
        assert!(matches!(ila_train(&chain, &cfg, &tcfg), Err(DpdError::Config(_))));
    }

    #[test]
    fn runaway_drive_is_divergence() {
        let cfg = AphConfig::standard_plain();
        let chain = TxChain::new(IqModulatorModel::ideal(), PaModel::nominal());
        let tcfg = TrainingConfig {
            n_training_samples: 2000,
            iterations: 1,
            ridge_lambda: None,
            seed: 1,
            regressor: RegressorSource::Feedback,
            waveform: waveform(1e9),
        };
        assert!(matches!(ila_train(&chain, &cfg, &tcfg), Err(DpdError::Divergence(_))));
    }
}
