use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dpd_core::analysis::{suppression_report, welch_psd};
use dpd_core::aph::{predistort_parallel, AphConfig, ChunkPlan, CoefficientVector};
use dpd_core::bench::{host_parallelism, run_bench, run_bench_with, to_csv};
use dpd_core::config::ExperimentConfig;
use dpd_core::impairments::run_tx_chain;
use dpd_core::iq::{read_iq, write_iq};
use dpd_core::training::ila_train;
use dpd_core::{DpdError, IqBuffer, Result};

pub const DEFAULT_CHUNK_LEN: usize = 65_536;

/// Loads a config; the seed comes from `seed`, else `DPD_SEED`, else the file.
pub fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?.with_env_seed()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DpdError::io(path, e))
}

fn load_coeffs(cfg: &ExperimentConfig, path: &Path) -> Result<(CoefficientVector, AphConfig)> {
    let text = fs::read_to_string(path).map_err(|e| DpdError::io(path, e))?;
    let (coeffs, aph) = CoefficientVector::from_json(&text, None)?;
    cfg.check_layout(&aph)?;
    Ok((coeffs, aph))
}

fn read_input(cfg: &ExperimentConfig, path: &Path) -> Result<IqBuffer> {
    read_iq(path, cfg.sample_rate_hz)
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    write_iq(out, &cfg.payload()?)
}

pub fn train(cfg: &ExperimentConfig, coeffs_path: &Path, report_path: &Path) -> Result<()> {
    let aph = cfg.aph_config()?;
    let (coeffs, report) = ila_train(&cfg.tx_chain(), &aph, &cfg.training_config())?;
    write_text(coeffs_path, &coeffs.to_json(&aph)?)?;
    write_text(report_path, &report.to_json()?)
}

fn apply(
    x: &IqBuffer,
    coeffs: &CoefficientVector,
    aph: &AphConfig,
    workers: usize,
    chunk_len: usize,
) -> Result<IqBuffer> {
    if workers == 0 {
        return Err(DpdError::config("--workers must be at least 1"));
    }
    let plan = ChunkPlan::new(chunk_len, workers, aph)?;
    predistort_parallel(x, coeffs, aph, &plan)
}

pub fn predistort(
    cfg: &ExperimentConfig,
    coeffs_path: &Path,
    input: &Path,
    output: &Path,
    workers: usize,
    chunk_len: usize,
) -> Result<()> {
    let (coeffs, aph) = load_coeffs(cfg, coeffs_path)?;
    let x = read_input(cfg, input)?;
    write_iq(output, &apply(&x, &coeffs, &aph, workers, chunk_len)?)
}

pub fn simulate(
    cfg: &ExperimentConfig,
    input: &Path,
    output: &Path,
    dpd: Option<&Path>,
    workers: usize,
) -> Result<()> {
    let mut x = read_input(cfg, input)?;
    if let Some(path) = dpd {
        let (coeffs, aph) = load_coeffs(cfg, path)?;
        x = apply(&x, &coeffs, &aph, workers, DEFAULT_CHUNK_LEN)?;
    }
    write_iq(output, &run_tx_chain(&x, &cfg.tx_chain())?)
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    input: &Path,
    compare: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let a = &cfg.analysis;
    let before = welch_psd(&read_input(cfg, input)?, a.nfft, a.overlap, a.window)?;
    let text = match compare {
        None => before.to_csv(),
        Some(path) => {
            let after = welch_psd(&read_input(cfg, path)?, a.nfft, a.overlap, a.window)?;
            let rows = suppression_report(&before, &after, &a.bands)?;
            let mut s = serde_json::to_string_pretty(&rows)
                .map_err(|e| DpdError::json("suppression report", e))?;
            s.push('\n');
            s
        }
    };
    match output {
        Some(path) => write_text(path, &text),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(DpdError::io(Path::new("<stdout>"), e))
                }
                _ => Ok(()),
            }
        }
    }
}

pub struct BenchOptions {
    pub n_samples: usize,
    pub workers: Vec<usize>,
    pub chunk_len: usize,
    pub repeats: usize,
    pub coeffs: Option<PathBuf>,
    pub inject_fault: bool,
}

/// Deterministic non-trivial coefficients for timing runs.
fn synthetic_coeffs(aph: &AphConfig) -> Result<CoefficientVector> {
    let n = aph.n_coefficients();
    let v = (0..n)
        .map(|i| {
            let t = i as f32 / n as f32;
            num_complex::Complex32::new(0.5 - t, 0.25 * t)
        })
        .collect();
    CoefficientVector::new(v)
}

pub fn bench(cfg: &ExperimentConfig, opts: &BenchOptions, out: &Path) -> Result<()> {
    let (coeffs, aph) = match &opts.coeffs {
        Some(path) => load_coeffs(cfg, path)?,
        None => {
            let aph = cfg.plain_aph_config()?;
            (synthetic_coeffs(&aph)?, aph)
        }
    };
    if opts.workers.contains(&0) {
        return Err(DpdError::config("--workers entries must be at least 1"));
    }
    let rows = if opts.inject_fault {
        run_bench_with(
            &aph,
            &coeffs,
            opts.n_samples,
            &opts.workers,
            opts.chunk_len,
            opts.repeats,
            |x, plan| {
                let mut s = predistort_parallel(x, &coeffs, &aph, plan)?.into_samples();
                let i = s.len() / 2;
                s[i].re += 1.0;
                IqBuffer::new(s, x.sample_rate_hz())
            },
        )?
    } else {
        run_bench(&aph, &coeffs, opts.n_samples, &opts.workers, opts.chunk_len, opts.repeats)?
    };
    eprintln!("host: {} logical core(s)", host_parallelism());
    write_text(out, &to_csv(&rows))
}
