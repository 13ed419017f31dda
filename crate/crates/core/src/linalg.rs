//! Dense complex least squares by Householder QR.

use num_complex::Complex64;

/// Result of a QR least-squares solve.
#[derive(Debug, Clone)]
pub(crate) struct QrSolution {
    pub x: Vec<Complex64>,
    /// `max |r_ii| / min |r_ii|` of the triangular factor.
    pub r_condition: f64,
}

/// Solves `min ||A x - b||` for a column-major `rows x cols` matrix,
/// `rows >= cols`. `a` and `b` are overwritten. Returns `None` when a
/// diagonal entry of `R` is exactly zero.
pub(crate) fn qr_least_squares(
    a: &mut [Complex64],
    rows: usize,
    cols: usize,
    b: &mut [Complex64],
) -> Option<QrSolution> {
    debug_assert!(rows >= cols);
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(b.len(), rows);
    let zero = Complex64::new(0.0, 0.0);
    let mut diag = vec![zero; cols];

    for k in 0..cols {
        let (done, rest) = a.split_at_mut((k + 1) * rows);
        let col = &mut done[k * rows..];
        let norm = col[k..].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        // v = x + e^{i arg x_k} ||x|| e_k, stored in place; R_kk = -e^{i arg} ||x||.
        let phase = if col[k].norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            col[k] / col[k].norm()
        };
        col[k] += phase * norm;
        diag[k] = -phase * norm;
        let vnorm2 = col[k..].iter().map(|v| v.norm_sqr()).sum::<f64>();
        let v = &col[k..];

        for j in 0..cols - k - 1 {
            let target = &mut rest[j * rows + k..(j + 1) * rows];
            let dot: Complex64 = v.iter().zip(target.iter()).map(|(vi, ti)| vi.conj() * ti).sum();
            let s = dot * (2.0 / vnorm2);
            for (t, vi) in target.iter_mut().zip(v) {
                *t -= s * vi;
            }
        }
        let dot: Complex64 = v.iter().zip(&b[k..]).map(|(vi, bi)| vi.conj() * bi).sum();
        let s = dot * (2.0 / vnorm2);
        for (t, vi) in b[k..].iter_mut().zip(v) {
            *t -= s * vi;
        }
    }

    let mut x = vec![zero; cols];
    for i in (0..cols).rev() {
        let mut s = b[i];
        for j in (i + 1)..cols {
            s -= a[j * rows + i] * x[j];
        }
        x[i] = s / diag[i];
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for d in &diag {
        lo = lo.min(d.norm());
        hi = hi.max(d.norm());
    }
    Some(QrSolution {
        x,
        r_condition: hi / lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_square_system() {
        // [[2, i], [1, 3]] x = [2+i, 4] -> x = [1, 1]
        let mut a = vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(3.0, 0.0),
        ];
        let mut b = vec![Complex64::new(2.0, 1.0), Complex64::new(4.0, 0.0)];
        let sol = qr_least_squares(&mut a, 2, 2, &mut b).unwrap();
        for x in sol.x {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn overdetermined_mean() {
        // Single all-ones column: the LS solution is the mean of b.
        let mut a = vec![Complex64::new(1.0, 0.0); 4];
        let mut b: Vec<_> = [1.0, 2.0, 3.0, 6.0]
            .iter()
            .map(|&v| Complex64::new(v, -v))
            .collect();
        let sol = qr_least_squares(&mut a, 4, 1, &mut b).unwrap();
        assert!((sol.x[0] - Complex64::new(3.0, -3.0)).norm() < 1e-14);
        assert_eq!(sol.r_condition, 1.0);
    }

    #[test]
    fn zero_column_is_reported() {
        let mut a = vec![Complex64::new(0.0, 0.0); 3];
        let mut b = vec![Complex64::new(1.0, 0.0); 3];
        assert!(qr_least_squares(&mut a, 3, 1, &mut b).is_none());
    }
}
