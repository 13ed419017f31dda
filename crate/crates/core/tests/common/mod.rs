//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the evaluation paths of the crate under test.

#![allow(dead_code)]

use std::path::PathBuf;

use dpd_core::aph::AphConfig;
use dpd_core::IqBuffer;
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c64(v: Complex32) -> Complex64 {
    Complex64::new(v.re as f64, v.im as f64)
}

pub fn random_buffer(n: usize, seed: u64, scale: f32) -> IqBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale)
        .collect();
    IqBuffer::new(samples, 1.0).unwrap()
}

pub fn random_complex(n: usize, seed: u64) -> Vec<Complex32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// `sum_m u[m] |x|^(m-1) x` (or `x*`), straight from the definition.
pub fn branch_value(x: Complex64, orders: &[u32], row: &[Complex64], conjugate: bool) -> Complex64 {
    let arg = if conjugate { x.conj() } else { x };
    row.iter()
        .zip(orders)
        .map(|(u, &m)| u * arg * x.norm().powf(m as f64 - 1.0))
        .sum()
}

/// Direct double-precision evaluation of the APH input-output relation,
/// with zero history before the first sample.
pub fn aph_oracle(x: &[Complex64], h: &[Complex64], cfg: &AphConfig) -> Vec<Complex64> {
    let basis = cfg.basis();
    let sets = cfg.sets();
    let mut out = vec![h[h.len() - 1]; x.len()];
    let mut offset = 0;
    let families = [
        (sets.main(), basis.u_main(), cfg.taps_main(), false),
        (sets.conj(), basis.u_conj(), cfg.taps_conj(), true),
    ];
    for (orders, table, taps, conjugate) in families {
        for (i, row) in table.iter().enumerate() {
            let used = &orders[..=i];
            for k in 0..taps[i] {
                let hk = h[offset + k];
                for n in k..x.len() {
                    out[n] += hk * branch_value(x[n - k], used, row, conjugate);
                }
            }
            offset += taps[i];
        }
    }
    out
}

/// Classical Gram-Schmidt of the monomials `|x|^(m-1) x` over `samples`
/// under `<f, g> = mean(conj(f) g)`. Row `i` holds the coefficients of the
/// `i`-th orthonormal function on monomials `0..=i`.
pub fn gram_schmidt(samples: &[Complex64], orders: &[u32], conjugate: bool) -> Vec<Vec<Complex64>> {
    let n = samples.len() as f64;
    let mono: Vec<Vec<Complex64>> = orders
        .iter()
        .map(|&m| {
            samples
                .iter()
                .map(|&x| branch_value(x, &[m], &[Complex64::new(1.0, 0.0)], conjugate))
                .collect()
        })
        .collect();
    let inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter().zip(b).map(|(p, q)| p.conj() * q).sum::<Complex64>() / n
    };
    let mut funcs: Vec<Vec<Complex64>> = Vec::new();
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for i in 0..orders.len() {
        let mut v = mono[i].clone();
        let mut row = vec![Complex64::new(0.0, 0.0); i + 1];
        row[i] = Complex64::new(1.0, 0.0);
        for j in 0..i {
            let proj = inner(&funcs[j], &mono[i]);
            for (a, b) in v.iter_mut().zip(&funcs[j]) {
                *a -= proj * b;
            }
            for (r, q) in row.iter_mut().zip(&rows[j]) {
                *r -= proj * q;
            }
        }
        let norm = inner(&v, &v).re.sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        row.iter_mut().for_each(|a| *a /= norm);
        funcs.push(v);
        rows.push(row);
    }
    rows
}

/// Mean power, accumulated in double precision.
pub fn mean_power(x: &[Complex32]) -> f64 {
    x.iter().map(|v| c64(*v).norm_sqr()).sum::<f64>() / x.len() as f64
}

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}
