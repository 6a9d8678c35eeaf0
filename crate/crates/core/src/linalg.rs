//! Small dense linear-algebra helpers shared by the solver modules.
//!
//! Every matrix handled here is tiny (a few dozen rows at most), so the
//! routines favour exactness and clarity over blocking or vectorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetrized argument, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Induced 2-norm of a symmetric matrix: the largest eigenvalue magnitude.
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0_f64, |acc, e| acc.max(e.abs()))
}

/// 2-norm condition number of a symmetric matrix. Returns `inf` when the
/// smallest eigenvalue magnitude is exactly zero.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    if ev.is_empty() {
        return 1.0;
    }
    let (lo, hi) = ev
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), e| (lo.min(e.abs()), hi.max(e.abs())));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Principal symmetric square root of a PSD matrix. Slightly negative
/// eigenvalues (rounding) are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose()))
}

/// Moore-Penrose pseudoinverse of a symmetric matrix through its eigen
/// decomposition. Eigenvalues below `rel_tol * max|eig|` are treated as zero.
pub fn sym_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
    let cutoff = rel_tol * scale;
    let inv = eig
        .eigenvalues
        .map(|e| if e.abs() > cutoff && e != 0.0 { 1.0 / e } else { 0.0 });
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&inv) * v.transpose()))
}

/// Pseudoinverse of a general rectangular matrix with a relative
/// singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, s| a.max(*s));
    let cutoff = rel_tol * smax;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V'");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff && *s > 0.0 {
            out += vt.row(i).transpose() * u.column(i).transpose() / *s;
        }
    }
    out
}

/// Numerical rank with a relative singular-value threshold.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, s| a.max(*s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One,
    Two,
}

/// Bunch-Kaufman factorization `P M P' = L D L'` of a symmetric (possibly
/// indefinite) matrix, with `L` unit lower triangular and `D` block
/// diagonal with 1x1 and 2x2 blocks.
#[derive(Debug, Clone)]
pub struct SymmetricIndefinite {
    l: DMatrix<f64>,
    d: DMatrix<f64>,
    perm: Vec<usize>,
    pivots: Vec<(usize, Pivot)>,
}

/// Returned when the factorization meets an exactly zero pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPivot;

impl SymmetricIndefinite {
    pub fn new(m: &DMatrix<f64>) -> Result<Self, ZeroPivot> {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "symmetric factorization needs a square matrix");
        let growth = (1.0 + 17f64.sqrt()) / 8.0;
        let mut a = symmetrize(m);
        let mut l = DMatrix::<f64>::identity(n, n);
        let mut d = DMatrix::<f64>::zeros(n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::new();

        let mut k = 0;
        while k < n {
            let akk = a[(k, k)].abs();
            let (imax, colmax) = ((k + 1)..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, 0.0_f64), |best, c| if c.1 > best.1 { c } else { best });
            if akk.max(colmax) == 0.0 {
                return Err(ZeroPivot);
            }
            let (kp, kind) = if akk >= growth * colmax {
                (k, Pivot::One)
            } else {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| a[(imax, j)].abs())
                    .fold(0.0_f64, f64::max);
                if akk * rowmax >= growth * colmax * colmax {
                    (k, Pivot::One)
                } else if a[(imax, imax)].abs() >= growth * rowmax {
                    (imax, Pivot::One)
                } else {
                    (imax, Pivot::Two)
                }
            };
            let kk = if kind == Pivot::One { k } else { k + 1 };
            if kp != kk {
                a.swap_rows(kk, kp);
                a.swap_columns(kk, kp);
                for j in 0..k {
                    l.swap((kk, j), (kp, j));
                }
                perm.swap(kk, kp);
            }

            match kind {
                Pivot::One => {
                    let piv = a[(k, k)];
                    if piv == 0.0 {
                        return Err(ZeroPivot);
                    }
                    d[(k, k)] = piv;
                    let col: Vec<f64> = ((k + 1)..n).map(|i| a[(i, k)]).collect();
                    for (ii, i) in ((k + 1)..n).enumerate() {
                        l[(i, k)] = col[ii] / piv;
                    }
                    for (ii, i) in ((k + 1)..n).enumerate() {
                        for (jj, j) in ((k + 1)..n).enumerate() {
                            a[(i, j)] -= col[ii] * col[jj] / piv;
                        }
                    }
                    pivots.push((k, Pivot::One));
                    k += 1;
                }
                Pivot::Two => {
                    let (d11, d21, d22) = (a[(k, k)], a[(k + 1, k)], a[(k + 1, k + 1)]);
                    let det = d11 * d22 - d21 * d21;
                    if det == 0.0 {
                        return Err(ZeroPivot);
                    }
                    d[(k, k)] = d11;
                    d[(k + 1, k)] = d21;
                    d[(k, k + 1)] = d21;
                    d[(k + 1, k + 1)] = d22;
                    let rows: Vec<(f64, f64)> = ((k + 2)..n).map(|i| (a[(i, k)], a[(i, k + 1)])).collect();
                    // rows of C D^{-1}
                    let lrows: Vec<(f64, f64)> = rows
                        .iter()
                        .map(|&(c0, c1)| ((c0 * d22 - c1 * d21) / det, (c1 * d11 - c0 * d21) / det))
                        .collect();
                    for (ii, i) in ((k + 2)..n).enumerate() {
                        l[(i, k)] = lrows[ii].0;
                        l[(i, k + 1)] = lrows[ii].1;
                    }
                    for (ii, i) in ((k + 2)..n).enumerate() {
                        for (jj, j) in ((k + 2)..n).enumerate() {
                            a[(i, j)] -= lrows[ii].0 * rows[jj].0 + lrows[ii].1 * rows[jj].1;
                        }
                    }
                    pivots.push((k, Pivot::Two));
                    k += 2;
                }
            }
        }
        Ok(SymmetricIndefinite { l, d, perm, pivots })
    }

    /// Solves `M X = B` column by column.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.l.nrows();
        assert_eq!(rhs.nrows(), n);
        let mut out = DMatrix::zeros(n, rhs.ncols());
        for c in 0..rhs.ncols() {
            let mut y: Vec<f64> = self.perm.iter().map(|&p| rhs[(p, c)]).collect();
            for i in 0..n {
                let s: f64 = (0..i).map(|j| self.l[(i, j)] * y[j]).sum();
                y[i] -= s;
            }
            for &(k, kind) in &self.pivots {
                match kind {
                    Pivot::One => y[k] /= self.d[(k, k)],
                    Pivot::Two => {
                        let (d11, d21, d22) = (self.d[(k, k)], self.d[(k + 1, k)], self.d[(k + 1, k + 1)]);
                        let det = d11 * d22 - d21 * d21;
                        let (b0, b1) = (y[k], y[k + 1]);
                        y[k] = (d22 * b0 - d21 * b1) / det;
                        y[k + 1] = (d11 * b1 - d21 * b0) / det;
                    }
                }
            }
            for i in (0..n).rev() {
                let s: f64 = ((i + 1)..n).map(|j| self.l[(j, i)] * y[j]).sum();
                y[i] -= s;
            }
            for (i, &p) in self.perm.iter().enumerate() {
                out[(p, c)] = y[i];
            }
        }
        out
    }

    pub fn solve_vector(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }

    /// Reassembles `P' L D L' P`; used by tests.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        let ldl = &self.l * &self.d * self.l.transpose();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.perm[i], self.perm[j])] = ldl[(i, j)];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn factors_saddle_point_matrix() {
        // [[2,1],[1,-1]] is the stage block for Pi=B=G=R=1, lambda=2.
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, -1.0]);
        let f = SymmetricIndefinite::new(&m).unwrap();
        let x = f.solve(&DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        assert!((x[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x[(1, 0)] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn needs_two_by_two_pivot() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
        let f = SymmetricIndefinite::new(&m).unwrap();
        assert!((f.reconstruct() - &m).norm() < 1e-13);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        assert!((&m * f.solve(&b) - b).norm() < 1e-13);
    }

    #[test]
    fn zero_matrix_is_rejected() {
        assert_eq!(SymmetricIndefinite::new(&DMatrix::zeros(2, 2)).unwrap_err(), ZeroPivot);
    }

    #[test]
    fn condition_of_simple_matrices() {
        assert_eq!(sym_condition(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])), 1.0);
        assert!(sym_condition(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])) > 1e14);
    }

    #[test]
    fn principal_root_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).norm() < 1e-13);
        assert!(min_eigenvalue(&r) > 0.0);
    }

    proptest! {
        #[test]
        fn ldlt_solves_random_symmetric(entries in proptest::collection::vec(-3.0f64..3.0, 25),
                                        rhs in proptest::collection::vec(-1.0f64..1.0, 5)) {
            let raw = DMatrix::from_row_slice(5, 5, &entries);
            let m = symmetrize(&raw);
            prop_assume!(sym_condition(&m) < 1e8);
            let f = SymmetricIndefinite::new(&m).unwrap();
            prop_assert!((f.reconstruct() - &m).norm() <= 1e-11 * (1.0 + m.norm()));
            let b = DMatrix::from_column_slice(5, 1, &rhs);
            let x = f.solve(&b);
            prop_assert!((&m * x - &b).norm() <= 1e-7 * (1.0 + b.norm()));
        }
    }
}
