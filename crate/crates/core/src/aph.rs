//! Application of a trained augmented parallel Hammerstein predistorter.
//!
//! Each output sample is
//!
//! ```text
//! z[n] = sum_p sum_k h[p,k] psi_p(x[n-k]) + sum_q sum_k hc[q,k] psi_q(x*[n-k]) + c
//! ```
//!
//! with `x[n] = 0` before the stream starts. Work is tiled: every tile first
//! evaluates all branch polynomials for its samples plus a halo of
//! `L_max - 1` preceding samples, then runs the per-branch FIR filters over
//! that buffer. Tiles never read each other's polynomials, so chunks handed
//! to different workers need no communication and the result is bit-identical
//! to the serial path regardless of how the stream is cut.

use std::collections::BTreeMap;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::basis::{BranchEvaluator, BranchSets, PolyBasis};
use crate::error::{DpdError, Result};
use crate::iq::IqBuffer;

/// Samples per tile inside a worker; keeps the polynomial buffer in cache.
const TILE: usize = 4096;

/// Branch structure, filter lengths and polynomial basis of a predistorter.
#[derive(Debug, Clone, PartialEq)]
pub struct AphConfig {
    basis: PolyBasis,
    taps_main: Vec<usize>,
    taps_conj: Vec<usize>,
}

impl AphConfig {
    pub fn new(basis: PolyBasis, taps_main: Vec<usize>, taps_conj: Vec<usize>) -> Result<Self> {
        let sets = basis.sets();
        if taps_main.len() != sets.main().len() {
            return Err(DpdError::config(format!(
                "taps_main has {} entries but I_P has {}",
                taps_main.len(),
                sets.main().len()
            )));
        }
        if taps_conj.len() != sets.conj().len() {
            return Err(DpdError::config(format!(
                "taps_conj has {} entries but I_Q has {}",
                taps_conj.len(),
                sets.conj().len()
            )));
        }
        if taps_main.iter().chain(&taps_conj).any(|&t| t == 0) {
            return Err(DpdError::config("every branch needs at least one tap"));
        }
        Ok(Self {
            basis,
            taps_main,
            taps_conj,
        })
    }

    /// `P = 5`, `Q = 3`, five taps on every branch.
    pub fn standard(basis: PolyBasis) -> Result<Self> {
        Self::new(basis, vec![5; 3], vec![5; 2])
    }

    /// [`AphConfig::standard`] with the plain monomial basis.
    pub fn standard_plain() -> Self {
        Self::standard(PolyBasis::plain(BranchSets::odd_up_to(5, 3).unwrap())).unwrap()
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    pub fn sets(&self) -> &BranchSets {
        self.basis.sets()
    }

    pub fn taps_main(&self) -> &[usize] {
        &self.taps_main
    }

    pub fn taps_conj(&self) -> &[usize] {
        &self.taps_conj
    }

    pub fn max_taps(&self) -> usize {
        self.taps_main
            .iter()
            .chain(&self.taps_conj)
            .copied()
            .max()
            .unwrap()
    }

    /// Length of the stacked coefficient vector, including `c`.
    pub fn n_coefficients(&self) -> usize {
        self.taps_main.iter().sum::<usize>() + self.taps_conj.iter().sum::<usize>() + 1
    }

    /// Branches in stacking order: main ascending, then conjugate ascending.
    pub fn branches(&self) -> impl Iterator<Item = (Branch, usize)> + '_ {
        let sets = self.basis.sets();
        sets.main()
            .iter()
            .zip(&self.taps_main)
            .map(|(&order, &t)| (Branch::main(order), t))
            .chain(
                sets.conj()
                    .iter()
                    .zip(&self.taps_conj)
                    .map(|(&order, &t)| (Branch::conj(order), t)),
            )
    }

    pub fn layout(&self) -> Layout {
        let sets = self.basis.sets();
        Layout {
            main: sets.main().to_vec(),
            conj: sets.conj().to_vec(),
            taps_main: self.taps_main.clone(),
            taps_conj: self.taps_conj.clone(),
        }
    }
}

/// Identifies one filter branch. Orders sort main-before-conjugate, then by
/// ascending order, which is the stacking order of [`CoefficientVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Branch {
    pub conjugate: bool,
    pub order: u32,
}

impl Branch {
    pub fn main(order: u32) -> Self {
        Self {
            conjugate: false,
            order,
        }
    }

    pub fn conj(order: u32) -> Self {
        Self {
            conjugate: true,
            order,
        }
    }
}

/// Stacked coefficients `[h_1 h_3 ... h_P hc_1 ... hc_Q c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    values: Vec<Complex32>,
}

impl CoefficientVector {
    pub fn new(values: Vec<Complex32>) -> Result<Self> {
        if values.is_empty() {
            return Err(DpdError::config("coefficient vector must hold at least c"));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(DpdError::config("coefficient vector contains non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn from_f64(values: &[Complex64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|v| Complex32::new(v.re as f32, v.im as f32))
                .collect(),
        )
    }

    /// The pass-through predistorter: `h[1,0] = 1 / u[1,1]`, everything
    /// else zero. Only a pass-through when order 1 is a main branch.
    pub fn identity(cfg: &AphConfig) -> Self {
        let mut values = vec![Complex32::new(0.0, 0.0); cfg.n_coefficients()];
        let u = cfg.basis().u_main()[0][0];
        let h = u.inv();
        values[0] = Complex32::new(h.re as f32, h.im as f32);
        Self { values }
    }

    pub fn zeros(cfg: &AphConfig) -> Self {
        Self {
            values: vec![Complex32::new(0.0, 0.0); cfg.n_coefficients()],
        }
    }

    pub fn as_slice(&self) -> &[Complex32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<Complex64> {
        self.values
            .iter()
            .map(|v| Complex64::new(v.re as f64, v.im as f64))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn c(&self) -> Complex32 {
        *self.values.last().unwrap()
    }

    fn check(&self, cfg: &AphConfig) -> Result<()> {
        if self.values.len() != cfg.n_coefficients() {
            return Err(DpdError::config(format!(
                "coefficient vector has {} entries, configuration needs {}",
                self.values.len(),
                cfg.n_coefficients()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self, cfg: &AphConfig) -> Result<String> {
        self.check(cfg)?;
        let n = self.values.len();
        let doc = CoefficientJson {
            h: self.values[..n - 1].to_vec(),
            c: self.values[n - 1],
            layout: cfg.layout(),
            basis: Some(cfg.basis().clone()),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| DpdError::json("coefficients", e))
    }

    /// Parses a coefficient file. Returns the configuration it was trained
    /// for; when the file carries no basis, `fallback_basis` is used.
    pub fn from_json(
        text: &str,
        fallback_basis: Option<&PolyBasis>,
    ) -> Result<(Self, AphConfig)> {
        let doc: CoefficientJson =
            serde_json::from_str(text).map_err(|e| DpdError::json("coefficients", e))?;
        let sets = BranchSets::new(doc.layout.main.clone(), doc.layout.conj.clone())?;
        let basis = match (doc.basis, fallback_basis) {
            (Some(b), _) => b,
            (None, Some(b)) => b.clone(),
            (None, None) => PolyBasis::plain(sets.clone()),
        };
        if basis.sets() != &sets {
            return Err(DpdError::config(
                "coefficient layout branch sets disagree with the basis",
            ));
        }
        let cfg = AphConfig::new(basis, doc.layout.taps_main, doc.layout.taps_conj)?;
        let mut values = doc.h;
        values.push(doc.c);
        let coeffs = Self::new(values)?;
        coeffs.check(&cfg)?;
        Ok((coeffs, cfg))
    }
}

/// Shape of the stacked vector as written to JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    #[serde(rename = "I_P")]
    pub main: Vec<u32>,
    #[serde(rename = "I_Q")]
    pub conj: Vec<u32>,
    pub taps_main: Vec<usize>,
    pub taps_conj: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientJson {
    h: Vec<Complex32>,
    c: Complex32,
    layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    basis: Option<PolyBasis>,
}

/// Stacks per-branch filters and `c` into a [`CoefficientVector`].
pub fn pack_coefficients(
    per_branch: &BTreeMap<Branch, Vec<Complex32>>,
    c: Complex32,
    cfg: &AphConfig,
) -> Result<CoefficientVector> {
    if per_branch.len() != cfg.sets().n_functions() {
        return Err(DpdError::config(format!(
            "expected {} branches, got {}",
            cfg.sets().n_functions(),
            per_branch.len()
        )));
    }
    let mut values = Vec::with_capacity(cfg.n_coefficients());
    for (branch, taps) in cfg.branches() {
        let h = per_branch
            .get(&branch)
            .ok_or_else(|| DpdError::config(format!("missing branch {branch:?}")))?;
        if h.len() != taps {
            return Err(DpdError::config(format!(
                "branch {branch:?} has {} taps, configuration needs {taps}",
                h.len()
            )));
        }
        values.extend_from_slice(h);
    }
    values.push(c);
    CoefficientVector::new(values)
}

/// Splits a [`CoefficientVector`] back into per-branch filters and `c`.
pub fn unpack_coefficients(
    coeffs: &CoefficientVector,
    cfg: &AphConfig,
) -> Result<(BTreeMap<Branch, Vec<Complex32>>, Complex32)> {
    coeffs.check(cfg)?;
    let mut map = BTreeMap::new();
    let mut offset = 0;
    for (branch, taps) in cfg.branches() {
        map.insert(branch, coeffs.values[offset..offset + taps].to_vec());
        offset += taps;
    }
    Ok((map, coeffs.c()))
}

/// How a stream is cut for data-parallel processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPlan {
    chunk_len: usize,
    halo: usize,
    n_workers: usize,
}

impl ChunkPlan {
    pub fn new(chunk_len: usize, n_workers: usize, cfg: &AphConfig) -> Result<Self> {
        let halo = cfg.max_taps() - 1;
        if n_workers == 0 {
            return Err(DpdError::config("n_workers must be at least 1"));
        }
        if chunk_len == 0 || chunk_len <= halo {
            return Err(DpdError::config(format!(
                "chunk_len {chunk_len} must exceed the halo of {halo} samples"
            )));
        }
        Ok(Self {
            chunk_len,
            halo,
            n_workers,
        })
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn halo(&self) -> usize {
        self.halo
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }
}

/// Prepared kernel: f32 polynomial evaluator plus per-branch tap slices.
struct Kernel<'a> {
    eval: BranchEvaluator,
    /// `(offset into coeffs, taps)` per branch in stacking order.
    filters: Vec<(usize, usize)>,
    coeffs: &'a [Complex32],
    c: Complex32,
    halo: usize,
}

/// Per-worker buffers reused across tiles.
struct Scratch {
    /// Branch-major polynomial values, `stride` entries per branch.
    poly: Vec<Complex32>,
    main: Vec<Complex32>,
    conj: Vec<Complex32>,
    acc: Vec<Complex32>,
}

impl<'a> Kernel<'a> {
    fn new(coeffs: &'a CoefficientVector, cfg: &AphConfig) -> Result<Self> {
        coeffs.check(cfg)?;
        let mut filters = Vec::new();
        let mut offset = 0;
        for (_, taps) in cfg.branches() {
            filters.push((offset, taps));
            offset += taps;
        }
        Ok(Self {
            eval: BranchEvaluator::new(cfg.basis()),
            filters,
            coeffs: coeffs.as_slice(),
            c: coeffs.c(),
            halo: cfg.max_taps() - 1,
        })
    }

    fn scratch(&self) -> Scratch {
        let stride = TILE + self.halo;
        Scratch {
            poly: vec![Complex32::new(0.0, 0.0); stride * self.filters.len()],
            main: vec![Complex32::new(0.0, 0.0); self.eval.n_main()],
            conj: vec![Complex32::new(0.0, 0.0); self.eval.n_conj()],
            acc: vec![Complex32::new(0.0, 0.0); TILE],
        }
    }

    /// Computes outputs for `x[start .. start + out.len()]`.
    fn run(&self, x: &[Complex32], start: usize, out: &mut [Complex32], s: &mut Scratch) {
        let mut done = 0;
        while done < out.len() {
            let len = TILE.min(out.len() - done);
            self.tile(x, start + done, &mut out[done..done + len], s);
            done += len;
        }
    }

    fn tile(&self, x: &[Complex32], start: usize, out: &mut [Complex32], s: &mut Scratch) {
        let len = out.len();
        let halo = self.halo;
        let stride = TILE + halo;
        let n_main = self.eval.n_main();
        let zero = Complex32::new(0.0, 0.0);

        // Polynomials for positions start-halo .. start+len; before the
        // stream start the input is zero and so is every branch value.
        for i in 0..len + halo {
            let pos = (start + i).checked_sub(halo);
            match pos {
                Some(p) => {
                    self.eval.eval_into(x[p], &mut s.main, &mut s.conj);
                    for (b, v) in s.main.iter().chain(&s.conj).enumerate() {
                        s.poly[b * stride + i] = *v;
                    }
                }
                None => {
                    for b in 0..n_main + self.eval.n_conj() {
                        s.poly[b * stride + i] = zero;
                    }
                }
            }
        }

        // Filters, accumulated per sample in fixed order: branches in
        // stacking order, taps ascending, then c.
        let acc = &mut s.acc[..len];
        for (b, &(offset, taps)) in self.filters.iter().enumerate() {
            let poly = &s.poly[b * stride..b * stride + len + halo];
            let h = &self.coeffs[offset..offset + taps];
            for (k, hk) in h.iter().enumerate() {
                let src = &poly[halo - k..halo - k + len];
                if b == 0 && k == 0 {
                    for (a, p) in acc.iter_mut().zip(src) {
                        *a = hk * p;
                    }
                } else {
                    for (a, p) in acc.iter_mut().zip(src) {
                        *a += hk * p;
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o = a + self.c;
        }
    }
}

/// Evaluates one output sample from the `L_max` most recent inputs, oldest
/// first (`window[L_max - 1]` is `x[n]`).
pub fn predistort_sample(
    window: &[Complex32],
    coeffs: &CoefficientVector,
    cfg: &AphConfig,
) -> Result<Complex32> {
    let kernel = Kernel::new(coeffs, cfg)?;
    let l_max = cfg.max_taps();
    if window.len() != l_max {
        return Err(DpdError::config(format!(
            "window holds {} samples, expected {l_max}",
            window.len()
        )));
    }
    let n_branches = kernel.filters.len();
    let n_main = kernel.eval.n_main();
    let mut main = vec![Complex32::new(0.0, 0.0); n_main];
    let mut conj = vec![Complex32::new(0.0, 0.0); kernel.eval.n_conj()];
    // psi[b][k] = branch b at x[n-k]
    let mut psi = vec![vec![Complex32::new(0.0, 0.0); l_max]; n_branches];
    for k in 0..l_max {
        kernel.eval.eval_into(window[l_max - 1 - k], &mut main, &mut conj);
        for (b, v) in main.iter().chain(&conj).enumerate() {
            psi[b][k] = *v;
        }
    }
    let mut acc: Option<Complex32> = None;
    for (b, &(offset, taps)) in kernel.filters.iter().enumerate() {
        for k in 0..taps {
            let term = kernel.coeffs[offset + k] * psi[b][k];
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
    }
    Ok(acc.unwrap() + kernel.c)
}

/// Single-threaded predistortion of a whole stream.
pub fn predistort_serial(
    x: &IqBuffer,
    coeffs: &CoefficientVector,
    cfg: &AphConfig,
) -> Result<IqBuffer> {
    let kernel = Kernel::new(coeffs, cfg)?;
    let mut out = vec![Complex32::new(0.0, 0.0); x.len()];
    let mut scratch = kernel.scratch();
    kernel.run(x.samples(), 0, &mut out, &mut scratch);
    IqBuffer::new(out, x.sample_rate_hz())
}

/// Data-parallel predistortion. The stream is cut into `plan.chunk_len()`
/// chunks dealt round-robin to `plan.n_workers()` threads; each chunk
/// recomputes its halo polynomials locally. Output is bit-identical to
/// [`predistort_serial`].
pub fn predistort_parallel(
    x: &IqBuffer,
    coeffs: &CoefficientVector,
    cfg: &AphConfig,
    plan: &ChunkPlan,
) -> Result<IqBuffer> {
    let kernel = Kernel::new(coeffs, cfg)?;
    if plan.halo != kernel.halo {
        return Err(DpdError::config(format!(
            "plan halo {} does not match configuration halo {}",
            plan.halo, kernel.halo
        )));
    }
    let input = x.samples();
    let mut out = vec![Complex32::new(0.0, 0.0); input.len()];

    let mut per_worker: Vec<Vec<(usize, &mut [Complex32])>> =
        (0..plan.n_workers).map(|_| Vec::new()).collect();
    for (i, chunk) in out.chunks_mut(plan.chunk_len).enumerate() {
        per_worker[i % plan.n_workers].push((i * plan.chunk_len, chunk));
    }

    let kernel = &kernel;
    let work = |chunks: Vec<(usize, &mut [Complex32])>| {
        let mut scratch = kernel.scratch();
        for (start, chunk) in chunks {
            kernel.run(input, start, chunk, &mut scratch);
        }
    };
    if plan.n_workers == 1 {
        per_worker.into_iter().for_each(work);
    } else {
        std::thread::scope(|s| {
            for chunks in per_worker.into_iter().filter(|c| !c.is_empty()) {
                s.spawn(move || work(chunks));
            }
        });
    }
    IqBuffer::new(out, x.sample_rate_hz())
}
