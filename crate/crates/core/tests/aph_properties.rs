mod common;

use common::{aph_oracle, branch_value, c64, gram_schmidt, random_buffer, random_complex};
use dpd_core::aph::{
    predistort_parallel, predistort_sample, predistort_serial, AphConfig, ChunkPlan,
    CoefficientVector,
};
use dpd_core::basis::{
    build_basis_matrix, evaluate_branch, fit_orthogonal_basis, BranchSets, PolyBasis,
};
use dpd_core::signal::{generate_carrier, normalize_power, CarrierSpec};
use num_complex::{Complex32, Complex64};
use proptest::prelude::*;

fn multitone_training(n: usize, seed: u64) -> dpd_core::IqBuffer {
    let raw = generate_carrier(&CarrierSpec::new(0.0, 10e6, 0.0), n, 61.44e6, seed).unwrap();
    normalize_power(&raw, 0.3).unwrap()
}

fn orthogonal_cfg(seed: u64) -> AphConfig {
    let sets = BranchSets::odd_up_to(5, 3).unwrap();
    AphConfig::standard(fit_orthogonal_basis(&multitone_training(20_000, seed), &sets).unwrap())
        .unwrap()
}

fn coeffs_from(v: Vec<Complex32>) -> CoefficientVector {
    CoefficientVector::new(v).unwrap()
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum();
    let den: f64 = b.iter().map(|q| q.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn serial_matches_double_precision_oracle() {
    for cfg in [AphConfig::standard_plain(), orthogonal_cfg(4)] {
        let x = random_buffer(3000, 11, 0.4);
        let coeffs = coeffs_from(random_complex(cfg.n_coefficients(), 12));
        let got: Vec<Complex64> = predistort_serial(&x, &coeffs, &cfg)
            .unwrap()
            .samples()
            .iter()
            .map(|v| c64(*v))
            .collect();
        let xs: Vec<Complex64> = x.samples().iter().map(|v| c64(*v)).collect();
        let want = aph_oracle(&xs, &coeffs.to_f64(), &cfg);
        assert!(rel_err(&got, &want) < 1e-5, "{}", rel_err(&got, &want));
    }
}

#[test]
fn zero_history_matches_zero_prefixed_oracle() {
    let cfg = AphConfig::standard_plain();
    let x = random_buffer(10, 13, 0.6);
    let coeffs = coeffs_from(random_complex(26, 14));
    let out = predistort_serial(&x, &coeffs, &cfg).unwrap();
    let l = cfg.max_taps();
    let mut padded = vec![Complex32::new(0.0, 0.0); l - 1];
    padded.extend_from_slice(x.samples());
    for n in 0..l - 1 {
        let window = &padded[n..n + l];
        let z = predistort_sample(window, &coeffs, &cfg).unwrap();
        assert_eq!(z, out.samples()[n]);
    }
}

#[test]
fn window_sample_matches_oracle() {
    let cfg = orthogonal_cfg(5);
    let window: Vec<Complex32> = random_complex(cfg.max_taps(), 15).iter().map(|v| v * 0.5).collect();
    let coeffs = coeffs_from(random_complex(cfg.n_coefficients(), 16));
    let z = c64(predistort_sample(&window, &coeffs, &cfg).unwrap());
    let xs: Vec<Complex64> = window.iter().map(|v| c64(*v)).collect();
    let want = *aph_oracle(&xs, &coeffs.to_f64(), &cfg).last().unwrap();
    assert!((z - want).norm() <= 1e-5 * want.norm());
}

#[test]
fn orthogonal_evaluation_matches_gram_schmidt() {
    let train = multitone_training(8000, 21);
    let sets = BranchSets::odd_up_to(5, 3).unwrap();
    let basis = fit_orthogonal_basis(&train, &sets).unwrap();
    let samples: Vec<Complex64> = train.samples().iter().map(|v| c64(*v)).collect();
    for (orders, conjugate) in [(sets.main(), false), (sets.conj(), true)] {
        let rows = gram_schmidt(&samples, orders, conjugate);
        for (i, row) in rows.iter().enumerate() {
            for x in train.samples().iter().step_by(97) {
                let got = c64(evaluate_branch(*x, orders[i], conjugate, &basis).unwrap());
                let want = branch_value(c64(*x), &orders[..=i], row, conjugate);
                assert!(
                    (got - want).norm() <= 1e-5 * want.norm().max(1e-2),
                    "order {} conj {conjugate}: {got} vs {want}",
                    orders[i]
                );
            }
        }
    }
}

#[test]
fn fitted_basis_gram_is_identity() {
    let train = multitone_training(20_000, 22);
    let sets = BranchSets::odd_up_to(5, 3).unwrap();
    let basis = fit_orthogonal_basis(&train, &sets).unwrap();
    let xs: Vec<Complex64> = train.samples().iter().map(|v| c64(*v)).collect();
    for (orders, table, conjugate) in [
        (sets.main(), basis.u_main(), false),
        (sets.conj(), basis.u_conj(), true),
    ] {
        let funcs: Vec<Vec<Complex64>> = table
            .iter()
            .enumerate()
            .map(|(i, row)| xs.iter().map(|&x| branch_value(x, &orders[..=i], row, conjugate)).collect())
            .collect();
        for a in 0..funcs.len() {
            for b in 0..funcs.len() {
                let g: Complex64 = funcs[a].iter().zip(&funcs[b]).map(|(p, q)| p.conj() * q).sum::<Complex64>()
                    / xs.len() as f64;
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((g - expect).norm() < 1e-3, "gram[{a}][{b}] = {g}");
            }
        }
    }
}

#[test]
fn basis_matrix_is_toeplitz_per_block() {
    let cfg = orthogonal_cfg(6);
    let y = random_buffer(300, 17, 0.5);
    let psi = build_basis_matrix(&y, cfg.basis(), cfg.taps_main(), cfg.taps_conj()).unwrap();
    for block in psi.blocks() {
        for k in 1..block.taps {
            for r in 1..psi.rows() {
                assert_eq!(psi.get(r, block.first_col + k), psi.get(r - 1, block.first_col + k - 1));
            }
        }
    }
    assert!((0..psi.rows()).all(|r| psi.get(r, psi.cols() - 1) == Complex64::new(1.0, 0.0)));
}

#[test]
fn parallel_grid_is_bit_identical() {
    let cfg = orthogonal_cfg(7);
    let x = random_buffer(50_000, 18, 0.5);
    let coeffs = coeffs_from(random_complex(cfg.n_coefficients(), 19));
    let serial = predistort_serial(&x, &coeffs, &cfg).unwrap();
    for chunk_len in [5, 7, 64, 4095, 4096, 4097, 10_000, 50_000, 80_000] {
        for workers in [1, 2, 3, 8] {
            let plan = ChunkPlan::new(chunk_len, workers, &cfg).unwrap();
            let par = predistort_parallel(&x, &coeffs, &cfg, &plan).unwrap();
            assert!(
                par.samples()
                    .iter()
                    .zip(serial.samples())
                    .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()),
                "chunk_len {chunk_len} workers {workers}"
            );
        }
    }
}

fn complex_strategy() -> impl Strategy<Value = Complex32> {
    (-0.8f32..0.8, -0.8f32..0.8).prop_map(|(re, im)| Complex32::new(re, im))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_in_coefficients(
        x in prop::collection::vec(complex_strategy(), 20..200),
        seed in 0u64..1000,
        a in -2.0f32..2.0,
        b in -2.0f32..2.0,
    ) {
        let cfg = AphConfig::standard_plain();
        let x = dpd_core::IqBuffer::new(x, 1.0).unwrap();
        let h1 = random_complex(26, seed);
        let h2 = random_complex(26, seed + 1);
        let mix: Vec<Complex32> = h1.iter().zip(&h2).map(|(p, q)| p * a + q * b).collect();
        let y1 = predistort_serial(&x, &coeffs_from(h1), &cfg).unwrap();
        let y2 = predistort_serial(&x, &coeffs_from(h2), &cfg).unwrap();
        let ym = predistort_serial(&x, &coeffs_from(mix), &cfg).unwrap();
        let expect: Vec<Complex64> = y1.samples().iter().zip(y2.samples())
            .map(|(p, q)| c64(*p) * a as f64 + c64(*q) * b as f64).collect();
        let got: Vec<Complex64> = ym.samples().iter().map(|v| c64(*v)).collect();
        let scale: f64 = y1.samples().iter().zip(y2.samples())
            .map(|(p, q)| (c64(*p) * a as f64).norm_sqr() + (c64(*q) * b as f64).norm_sqr())
            .sum::<f64>().sqrt();
        let err: f64 = got.iter().zip(&expect).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-5 * scale.max(1e-12), "err {} scale {}", err, scale);
    }

    #[test]
    fn causal(
        x in prop::collection::vec(complex_strategy(), 10..120),
        pick in 0usize..1000,
        delta in complex_strategy(),
    ) {
        let cfg = AphConfig::standard_plain();
        let coeffs = coeffs_from(random_complex(26, 3));
        let m = pick % x.len();
        let mut changed = x.clone();
        changed[m] += delta + Complex32::new(0.01, 0.0);
        let a = predistort_serial(&dpd_core::IqBuffer::new(x, 1.0).unwrap(), &coeffs, &cfg).unwrap();
        let b = predistort_serial(&dpd_core::IqBuffer::new(changed, 1.0).unwrap(), &coeffs, &cfg).unwrap();
        prop_assert_eq!(&a.samples()[..m], &b.samples()[..m]);
    }

    #[test]
    fn evaluation_is_linear_in_u(x in complex_strategy(), s in -3.0f64..3.0) {
        let sets = BranchSets::odd_up_to(5, 3).unwrap();
        let train = random_buffer(2000, 5, 0.5);
        let fitted = fit_orthogonal_basis(&train, &sets).unwrap();
        let scaled: Vec<Vec<Complex64>> = fitted.u_main().iter()
            .map(|r| r.iter().map(|u| u * s).collect()).collect();
        let scaled = PolyBasis::from_tables(
            fitted.mode(), sets.clone(), scaled, fitted.u_conj().to_vec(),
        );
        if let Ok(scaled) = scaled {
            for p in [1u32, 3, 5] {
                let a = fitted.evaluate_f64(c64(x), p, false).unwrap();
                let b = scaled.evaluate_f64(c64(x), p, false).unwrap();
                prop_assert!((b - a * s).norm() <= 1e-12 * (1.0 + a.norm()));
            }
        }
    }
}
