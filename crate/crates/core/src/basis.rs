//! Branch polynomials of the augmented parallel Hammerstein model and the
//! convolution-structured regression matrix used to train it.
//!
//! Main branch `p` evaluates `psi_p(x) = sum_{m in I_p} u[m,p] |x|^(m-1) x`,
//! conjugate branch `q` evaluates the same form on `x*`. `I_p` holds the
//! branch orders up to and including `p`. In plain mode `u` is the identity,
//! so each branch is a single odd monomial.

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::iq::IqBuffer;

/// Largest supported polynomial order; bounds per-sample scratch arrays.
pub const MAX_ORDER: u32 = 15;
/// Number of odd orders up to [`MAX_ORDER`].
pub(crate) const MAX_MONOMIALS: usize = (MAX_ORDER as usize + 1) / 2;

/// Polynomial orders used by the main (`I_P`) and conjugate (`I_Q`) branches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSets {
    #[serde(rename = "I_P")]
    main: Vec<u32>,
    #[serde(rename = "I_Q")]
    conj: Vec<u32>,
}

impl BranchSets {
    pub fn new(main: Vec<u32>, conj: Vec<u32>) -> Result<Self> {
        fn check(name: &str, set: &[u32]) -> Result<()> {
            if set.is_empty() {
                return Err(DpdError::config(format!("{name} must not be empty")));
            }
            for w in set.windows(2) {
                if w[0] >= w[1] {
                    return Err(DpdError::config(format!("{name} must be strictly ascending")));
                }
            }
            if let Some(&bad) = set.iter().find(|&&o| o % 2 == 0 || o > MAX_ORDER) {
                return Err(DpdError::config(format!(
                    "{name} order {bad} must be odd and at most {MAX_ORDER}"
                )));
            }
            Ok(())
        }
        check("I_P", &main)?;
        check("I_Q", &conj)?;
        if conj.last() > main.last() {
            return Err(DpdError::config("highest conjugate order Q must not exceed P"));
        }
        Ok(Self { main, conj })
    }

    /// All odd orders `1, 3, ..., p` and `1, 3, ..., q`.
    pub fn odd_up_to(p: u32, q: u32) -> Result<Self> {
        if p % 2 == 0 || q % 2 == 0 {
            return Err(DpdError::config(format!("P={p} and Q={q} must be odd")));
        }
        Self::new((1..=p).step_by(2).collect(), (1..=q).step_by(2).collect())
    }

    pub fn main(&self) -> &[u32] {
        &self.main
    }

    pub fn conj(&self) -> &[u32] {
        &self.conj
    }

    pub fn n_functions(&self) -> usize {
        self.main.len() + self.conj.len()
    }

    pub fn max_order(&self) -> u32 {
        *self.main.last().unwrap().max(self.conj.last().unwrap())
    }

    fn index_of(&self, order: u32, conjugate: bool) -> Option<usize> {
        let set = if conjugate { &self.conj } else { &self.main };
        set.iter().position(|&o| o == order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMode {
    Plain,
    Orthogonal,
}

/// Coefficient tables `u[m,p]` and `u[m,q]` defining every branch polynomial.
///
/// `u_main[i][j]` weights monomial order `I_P[j]` inside branch `I_P[i]`
/// (`j <= i`); `u_conj` is laid out the same way over `I_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBasis {
    mode: BasisMode,
    sets: BranchSets,
    u_main: Vec<Vec<Complex64>>,
    u_conj: Vec<Vec<Complex64>>,
}

fn identity_table(n: usize) -> Vec<Vec<Complex64>> {
    (0..n)
        .map(|i| {
            let mut row = vec![Complex64::new(0.0, 0.0); i + 1];
            row[i] = Complex64::new(1.0, 0.0);
            row
        })
        .collect()
}

#[inline]
fn monomial_index(order: u32) -> usize {
    (order as usize - 1) / 2
}

impl PolyBasis {
    /// Monomial basis: `psi_p(x) = |x|^(p-1) x`.
    pub fn plain(sets: BranchSets) -> Self {
        Self {
            mode: BasisMode::Plain,
            u_main: identity_table(sets.main.len()),
            u_conj: identity_table(sets.conj.len()),
            sets,
        }
    }

    /// Builds a basis from explicit tables, checking shape and diagonal.
    pub fn from_tables(
        mode: BasisMode,
        sets: BranchSets,
        u_main: Vec<Vec<Complex64>>,
        u_conj: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        for (name, table, n) in [
            ("u_main", &u_main, sets.main.len()),
            ("u_conj", &u_conj, sets.conj.len()),
        ] {
            if table.len() != n {
                return Err(DpdError::config(format!(
                    "{name} has {} rows, expected {n}",
                    table.len()
                )));
            }
            for (i, row) in table.iter().enumerate() {
                if row.len() != i + 1 {
                    return Err(DpdError::config(format!(
                        "{name} row {i} has {} entries, expected {}",
                        row.len(),
                        i + 1
                    )));
                }
                if row.iter().any(|u| !(u.re.is_finite() && u.im.is_finite())) {
                    return Err(DpdError::config(format!("{name} row {i} is not finite")));
                }
                if row[i] == Complex64::new(0.0, 0.0) {
                    return Err(DpdError::config(format!("{name} diagonal entry {i} is zero")));
                }
            }
        }
        let basis = Self {
            mode,
            sets,
            u_main,
            u_conj,
        };
        if mode == BasisMode::Plain && basis != PolyBasis::plain(basis.sets.clone()) {
            return Err(DpdError::config("plain basis must have identity tables"));
        }
        Ok(basis)
    }

    /// Plain mode ignores `training`; orthogonal mode fits on it.
    pub fn for_mode(mode: BasisMode, sets: BranchSets, training: &IqBuffer) -> Result<Self> {
        match mode {
            BasisMode::Plain => Ok(Self::plain(sets)),
            BasisMode::Orthogonal => fit_orthogonal_basis(training, &sets),
        }
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn sets(&self) -> &BranchSets {
        &self.sets
    }

    pub fn u_main(&self) -> &[Vec<Complex64>] {
        &self.u_main
    }

    pub fn u_conj(&self) -> &[Vec<Complex64>] {
        &self.u_conj
    }

    /// Double-precision evaluation of one branch polynomial.
    pub fn evaluate_f64(&self, x: Complex64, order: u32, conjugate: bool) -> Result<Complex64> {
        let idx = self.sets.index_of(order, conjugate).ok_or_else(|| {
            DpdError::config(format!(
                "order {order} is not a {} branch",
                if conjugate { "conjugate" } else { "main" }
            ))
        })?;
        let (orders, row) = if conjugate {
            (&self.sets.conj, &self.u_conj[idx])
        } else {
            (&self.sets.main, &self.u_main[idx])
        };
        let arg = if conjugate { x.conj() } else { x };
        let mag = x.norm();
        Ok(row
            .iter()
            .zip(orders)
            .map(|(u, &m)| u * arg * mag.powi(m as i32 - 1))
            .sum())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&PolyBasisJson::from(self))
            .map_err(|e| DpdError::json("basis", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PolyBasisJson =
            serde_json::from_str(text).map_err(|e| DpdError::json("basis", e))?;
        raw.try_into()
    }
}

/// On-disk representation of [`PolyBasis`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PolyBasisJson {
    mode: BasisMode,
    #[serde(rename = "I_P")]
    main: Vec<u32>,
    #[serde(rename = "I_Q")]
    conj: Vec<u32>,
    u_main: Vec<Vec<Complex64>>,
    u_conj: Vec<Vec<Complex64>>,
}

impl From<&PolyBasis> for PolyBasisJson {
    fn from(b: &PolyBasis) -> Self {
        Self {
            mode: b.mode,
            main: b.sets.main.clone(),
            conj: b.sets.conj.clone(),
            u_main: b.u_main.clone(),
            u_conj: b.u_conj.clone(),
        }
    }
}

impl TryFrom<PolyBasisJson> for PolyBasis {
    type Error = DpdError;

    fn try_from(raw: PolyBasisJson) -> Result<Self> {
        let sets = BranchSets::new(raw.main, raw.conj)?;
        PolyBasis::from_tables(raw.mode, sets, raw.u_main, raw.u_conj)
    }
}

impl Serialize for PolyBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyBasisJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolyBasis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PolyBasisJson::deserialize(d)?;
        raw.try_into().map_err(serde::de::Error::custom)
    }
}

/// Single-precision evaluator for every branch of a [`PolyBasis`].
///
/// Monomials are built from low to high order, each reusing the previous one
/// (`|x|^(m+1) x = |x|^2 * |x|^(m-1) x`), then combined through the `u`
/// tables. This is the only polynomial path used by the predistorter.
#[derive(Debug, Clone)]
pub struct BranchEvaluator {
    plain: bool,
    n_monomials: usize,
    main_orders: Vec<usize>,
    conj_orders: Vec<usize>,
    u_main: Vec<Vec<Complex32>>,
    u_conj: Vec<Vec<Complex32>>,
}

fn table_f32(t: &[Vec<Complex64>]) -> Vec<Vec<Complex32>> {
    t.iter()
        .map(|row| {
            row.iter()
                .map(|u| Complex32::new(u.re as f32, u.im as f32))
                .collect()
        })
        .collect()
}

impl BranchEvaluator {
    pub fn new(basis: &PolyBasis) -> Self {
        let sets = &basis.sets;
        Self {
            plain: basis.mode == BasisMode::Plain,
            n_monomials: monomial_index(sets.max_order()) + 1,
            main_orders: sets.main.iter().map(|&o| monomial_index(o)).collect(),
            conj_orders: sets.conj.iter().map(|&o| monomial_index(o)).collect(),
            u_main: table_f32(&basis.u_main),
            u_conj: table_f32(&basis.u_conj),
        }
    }

    pub fn n_main(&self) -> usize {
        self.main_orders.len()
    }

    pub fn n_conj(&self) -> usize {
        self.conj_orders.len()
    }

    /// Writes `psi_p(x)` for every main branch into `main` and `psi_q(x*)` for
    /// every conjugate branch into `conj`.
    #[inline]
    pub fn eval_into(&self, x: Complex32, main: &mut [Complex32], conj: &mut [Complex32]) {
        let mut mono = [Complex32::new(0.0, 0.0); MAX_MONOMIALS];
        let r2 = x.re * x.re + x.im * x.im;
        mono[0] = x;
        for k in 1..self.n_monomials {
            mono[k] = mono[k - 1] * r2;
        }
        if self.plain {
            for (out, &k) in main.iter_mut().zip(&self.main_orders) {
                *out = mono[k];
            }
            for (out, &k) in conj.iter_mut().zip(&self.conj_orders) {
                *out = mono[k].conj();
            }
            return;
        }
        for (i, out) in main.iter_mut().enumerate() {
            let row = &self.u_main[i];
            let mut acc = row[0] * mono[self.main_orders[0]];
            for j in 1..row.len() {
                acc += row[j] * mono[self.main_orders[j]];
            }
            *out = acc;
        }
        for (i, out) in conj.iter_mut().enumerate() {
            let row = &self.u_conj[i];
            let mut acc = row[0] * mono[self.conj_orders[0]].conj();
            for j in 1..row.len() {
                acc += row[j] * mono[self.conj_orders[j]].conj();
            }
            *out = acc;
        }
    }
}

/// Evaluates one branch polynomial in single precision through the same
/// evaluator the predistorter uses.
pub fn evaluate_branch(
    x: Complex32,
    branch_order: u32,
    conjugate: bool,
    basis: &PolyBasis,
) -> Result<Complex32> {
    let idx = basis.sets.index_of(branch_order, conjugate).ok_or_else(|| {
        DpdError::config(format!(
            "order {branch_order} is not in the {} branch set",
            if conjugate { "conjugate" } else { "main" }
        ))
    })?;
    let ev = BranchEvaluator::new(basis);
    let mut main = vec![Complex32::new(0.0, 0.0); ev.n_main()];
    let mut conj = vec![Complex32::new(0.0, 0.0); ev.n_conj()];
    ev.eval_into(x, &mut main, &mut conj);
    Ok(if conjugate { conj[idx] } else { main[idx] })
}

/// Relative pivot below which the moment matrix is treated as rank deficient.
const PIVOT_TOLERANCE: f64 = 1e-9;

/// Orthonormalizes one family of monomials over `samples`.
///
/// With `R = L L^H` the sample moment matrix of the monomials, the table is
/// `U = L^{-H}`, so the combined functions have identity sample Gram matrix.
fn orthonormal_table(
    samples: &[Complex64],
    orders: &[u32],
    conjugate: bool,
) -> Result<Vec<Vec<Complex64>>> {
    let n = orders.len();
    let mut gram = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let mut phi = vec![Complex64::new(0.0, 0.0); n];
    for &x in samples {
        let arg = if conjugate { x.conj() } else { x };
        let mag = x.norm();
        for (slot, &m) in phi.iter_mut().zip(orders) {
            *slot = arg * mag.powi(m as i32 - 1);
        }
        for i in 0..n {
            for j in 0..n {
                gram[i][j] += phi[i].conj() * phi[j];
            }
        }
    }
    let count = samples.len() as f64;
    for row in gram.iter_mut() {
        for v in row.iter_mut() {
            *v /= count;
        }
    }

    // Cholesky: gram = L L^H.
    let mut l = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for j in 0..n {
        let mut d = gram[j][j].re;
        for k in 0..j {
            d -= l[j][k].norm_sqr();
        }
        if !(d > PIVOT_TOLERANCE * gram[j][j].re) {
            let condition = if d > 0.0 { gram[j][j].re / d } else { f64::INFINITY };
            return Err(DpdError::Conditioning {
                what: format!(
                    "sample moments of {} monomials are rank deficient at order {}",
                    if conjugate { "conjugate" } else { "main" },
                    orders[j]
                ),
                condition,
            });
        }
        let djj = d.sqrt();
        l[j][j] = Complex64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = gram[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k].conj();
            }
            l[i][j] = s / djj;
        }
    }

    // Invert the lower-triangular factor by forward substitution.
    let mut inv = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for col in 0..n {
        inv[col][col] = l[col][col].inv();
        for i in (col + 1)..n {
            let mut s = Complex64::new(0.0, 0.0);
            for k in col..i {
                s += l[i][k] * inv[k][col];
            }
            inv[i][col] = -s / l[i][i];
        }
    }

    // U = inv^H is upper triangular; branch i uses column i of U.
    Ok((0..n)
        .map(|i| (0..=i).map(|j| inv[i][j].conj()).collect())
        .collect())
}

/// Fits statistically orthogonal branch polynomials to `training`.
///
/// Main and conjugate families are orthonormalized separately.
pub fn fit_orthogonal_basis(training: &IqBuffer, sets: &BranchSets) -> Result<PolyBasis> {
    let needed = 10 * sets.n_functions();
    if training.len() < needed {
        return Err(DpdError::InsufficientData {
            needed,
            got: training.len(),
        });
    }
    let samples: Vec<Complex64> = training
        .samples()
        .iter()
        .map(|s| Complex64::new(s.re as f64, s.im as f64))
        .collect();
    let u_main = orthonormal_table(&samples, &sets.main, false)?;
    let u_conj = orthonormal_table(&samples, &sets.conj, true)?;
    Ok(PolyBasis {
        mode: BasisMode::Orthogonal,
        sets: sets.clone(),
        u_main,
        u_conj,
    })
}

/// Column block of a [`BasisMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub order: u32,
    pub conjugate: bool,
    pub first_col: usize,
    pub taps: usize,
}

/// Dense regression matrix `[Psi_1 ... Psi_P, conj Psi_1 ... Psi_Q, 1]`.
///
/// Stored column-major. Each branch block is the full convolution matrix of
/// its polynomial sequence (`M + L_max - 1` rows, zero padded), and the last
/// column is all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    rows: usize,
    cols: usize,
    values: Vec<Complex64>,
    blocks: Vec<BlockInfo>,
}

impl BasisMatrix {
    /// Wraps a column-major matrix with no block structure.
    pub fn from_columns(rows: usize, columns: Vec<Vec<Complex64>>) -> Result<Self> {
        if columns.iter().any(|c| c.len() != rows) {
            return Err(DpdError::config("all columns must have `rows` entries"));
        }
        let cols = columns.len();
        Ok(Self {
            rows,
            cols,
            values: columns.into_iter().flatten().collect(),
            blocks: Vec::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[Complex64] {
        &self.values[col * self.rows..(col + 1) * self.rows]
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    /// `Psi * h` in double precision.
    pub fn mul_vec(&self, h: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(h.len(), self.cols, "vector length must equal column count");
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for (c, hc) in h.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.column(c)) {
                *o += v * hc;
            }
        }
        out
    }
}

/// Builds the regression matrix from an `IqBuffer`.
pub fn build_basis_matrix(
    y: &IqBuffer,
    basis: &PolyBasis,
    taps_main: &[usize],
    taps_conj: &[usize],
) -> Result<BasisMatrix> {
    let samples: Vec<Complex64> = y
        .samples()
        .iter()
        .map(|s| Complex64::new(s.re as f64, s.im as f64))
        .collect();
    build_basis_matrix_f64(&samples, basis, taps_main, taps_conj)
}

/// Double-precision variant used by training, where the regressors are
/// gain-normalized feedback samples.
pub fn build_basis_matrix_f64(
    y: &[Complex64],
    basis: &PolyBasis,
    taps_main: &[usize],
    taps_conj: &[usize],
) -> Result<BasisMatrix> {
    let sets = basis.sets();
    if taps_main.len() != sets.main.len() || taps_conj.len() != sets.conj.len() {
        return Err(DpdError::config(format!(
            "tap counts ({} main, {} conjugate) do not match branch sets ({} main, {} conjugate)",
            taps_main.len(),
            taps_conj.len(),
            sets.main.len(),
            sets.conj.len()
        )));
    }
    if taps_main.iter().chain(taps_conj).any(|&t| t == 0) {
        return Err(DpdError::config("every branch needs at least one tap"));
    }
    let l_max = taps_main.iter().chain(taps_conj).copied().max().unwrap();
    let m = y.len();
    if m < l_max {
        return Err(DpdError::InsufficientData {
            needed: l_max,
            got: m,
        });
    }

    let rows = m + l_max - 1;
    let cols = taps_main.iter().sum::<usize>() + taps_conj.iter().sum::<usize>() + 1;
    let mut values = vec![Complex64::new(0.0, 0.0); rows * cols];
    let mut blocks = Vec::with_capacity(sets.n_functions());
    let mut col = 0;

    let branches = sets
        .main
        .iter()
        .zip(taps_main)
        .map(|(&o, &t)| (o, false, t))
        .chain(sets.conj.iter().zip(taps_conj).map(|(&o, &t)| (o, true, t)));
    for (order, conjugate, taps) in branches {
        let seq = y
            .iter()
            .map(|&x| basis.evaluate_f64(x, order, conjugate))
            .collect::<Result<Vec<_>>>()?;
        blocks.push(BlockInfo {
            order,
            conjugate,
            first_col: col,
            taps,
        });
        for k in 0..taps {
            let column = &mut values[col * rows..(col + 1) * rows];
            column[k..k + m].copy_from_slice(&seq);
            col += 1;
        }
    }
    values[col * rows..].fill(Complex64::new(1.0, 0.0));

    Ok(BasisMatrix {
        rows,
        cols,
        values,
        blocks,
    })
}
