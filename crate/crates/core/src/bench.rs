//! Throughput measurement of the data-parallel predistorter (`T = N / L`).

use std::time::Instant;

use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aph::{predistort_parallel, predistort_serial, AphConfig, ChunkPlan, CoefficientVector};
use crate::error::{DpdError, Result};
use crate::iq::IqBuffer;

pub const CSV_HEADER: &str =
    "workers,chunk_len,n_samples,latency_s_median,throughput_sps_median,throughput_sps_min";

const BENCH_SEED: u64 = 0xBE7C_0001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub n_samples: usize,
    pub workers: usize,
    pub chunk_len: usize,
    pub repeats: usize,
    pub latency_s_median: f64,
    pub latency_s_min: f64,
    pub latency_s_max: f64,
    pub throughput_sps_median: f64,
    pub throughput_sps_min: f64,
}

impl BenchResult {
    fn from_latencies(n: usize, workers: usize, chunk_len: usize, mut lat: Vec<f64>) -> Self {
        lat.sort_by(f64::total_cmp);
        let median = median_sorted(&lat);
        let (lo, hi) = (lat[0], lat[lat.len() - 1]);
        Self {
            n_samples: n,
            workers,
            chunk_len,
            repeats: lat.len(),
            latency_s_median: median,
            latency_s_min: lo,
            latency_s_max: hi,
            throughput_sps_median: n as f64 / median,
            throughput_sps_min: n as f64 / hi,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.9},{:.3},{:.3}",
            self.workers,
            self.chunk_len,
            self.n_samples,
            self.latency_s_median,
            self.throughput_sps_median,
            self.throughput_sps_min
        )
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Random uniform-phase buffer at RMS ~0.5 used as the benchmark workload.
pub fn bench_input(n: usize, sample_rate_hz: f64) -> Result<IqBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_SEED);
    let samples = (0..n)
        .map(|_| {
            Complex32::new(rng.random_range(-0.87..0.87), rng.random_range(-0.87..0.87))
        })
        .collect();
    IqBuffer::new(samples, sample_rate_hz)
}

/// Median latency of [`predistort_serial`] over `repeats` runs after one warm-up.
pub fn time_serial(
    x: &IqBuffer,
    coeffs: &CoefficientVector,
    cfg: &AphConfig,
    repeats: usize,
) -> Result<f64> {
    predistort_serial(x, coeffs, cfg)?;
    let mut lat = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let out = predistort_serial(x, coeffs, cfg)?;
        lat.push(t.elapsed().as_secs_f64());
        drop(out);
    }
    lat.sort_by(f64::total_cmp);
    Ok(median_sorted(&lat))
}

/// Benchmarks [`predistort_parallel`] for each worker count.
pub fn run_bench(
    cfg: &AphConfig,
    coeffs: &CoefficientVector,
    n_samples: usize,
    workers_list: &[usize],
    chunk_len: usize,
    repeats: usize,
) -> Result<Vec<BenchResult>> {
    run_bench_with(cfg, coeffs, n_samples, workers_list, chunk_len, repeats, |x, plan| {
        predistort_parallel(x, coeffs, cfg, plan)
    })
}

/// [`run_bench`] with the engine under test supplied by the caller. The
/// engine's output is compared once against the serial reference for every
/// configuration before any timing; a mismatch aborts with
/// [`DpdError::Correctness`].
pub fn run_bench_with<F>(
    cfg: &AphConfig,
    coeffs: &CoefficientVector,
    n_samples: usize,
    workers_list: &[usize],
    chunk_len: usize,
    repeats: usize,
    engine: F,
) -> Result<Vec<BenchResult>>
where
    F: Fn(&IqBuffer, &ChunkPlan) -> Result<IqBuffer>,
{
    if repeats == 0 {
        return Err(DpdError::config("repeats must be at least 1"));
    }
    if n_samples < chunk_len {
        return Err(DpdError::config(format!(
            "n_samples {n_samples} must be at least chunk_len {chunk_len}"
        )));
    }
    if workers_list.is_empty() {
        return Err(DpdError::config("workers list is empty"));
    }
    let x = bench_input(n_samples, 1.0)?;
    let reference = predistort_serial(&x, coeffs, cfg)?;

    let mut results = Vec::with_capacity(workers_list.len());
    for &workers in workers_list {
        let plan = ChunkPlan::new(chunk_len, workers, cfg)?;
        // Correctness check, doubling as the discarded warm-up.
        let check = engine(&x, &plan)?;
        if let Some(i) = check
            .samples()
            .iter()
            .zip(reference.samples())
            .position(|(a, b)| a.re.to_bits() != b.re.to_bits() || a.im.to_bits() != b.im.to_bits())
        {
            return Err(DpdError::Correctness(format!(
                "parallel output differs from serial at sample {i} (workers={workers}, chunk_len={chunk_len})"
            )));
        }
        if check.len() != reference.len() {
            return Err(DpdError::Correctness("parallel output length differs".into()));
        }
        drop(check);

        let mut lat = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            let out = engine(&x, &plan)?;
            lat.push(t.elapsed().as_secs_f64());
            drop(out);
        }
        results.push(BenchResult::from_latencies(n_samples, workers, chunk_len, lat));
    }
    Ok(results)
}

/// Logical cores visible to this process.
pub fn host_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
