//! Symmetric banded matrices with a banded Cholesky factorization.
//!
//! Every linear system in this crate is of the form `K + D` with `K` the
//! Dirichlet stiffness matrix of a uniform 1D/2D tensor grid and `D`
//! diagonal and nonnegative, so the bandwidth is 1 (1D) or the number of
//! interior nodes per row (2D).  A dense band is cheap at that scale and a
//! direct factorization keeps the solves reproducible to the last bit.

use crate::error::{Error, Result};

/// Symmetric matrix stored by its lower band.
///
/// `data[i * (bw + 1) + d]` holds entry `(i, i - bw + d)`; `d == bw` is the
/// diagonal.  Entries left of column 0 are padding and stay zero.
#[derive(Debug, Clone)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Entry (i, j) with j <= i. Out-of-band reads return 0.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Set entry (i, j); the symmetric twin is implied by storage.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// y = A x, using symmetry.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        for i in 0..self.n {
            let jlo = i.saturating_sub(self.bw);
            let mut acc = 0.0;
            for j in jlo..i {
                let a = self.data[self.slot(i, j)];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            acc += self.data[self.slot(i, i)] * x[i];
            y[i] += acc;
        }
    }

    /// Quadratic form xᵀ A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        let mut total = 0.0;
        for i in 0..self.n {
            let jlo = i.saturating_sub(self.bw);
            let mut off = 0.0;
            for j in jlo..i {
                off += self.data[self.slot(i, j)] * x[j];
            }
            total += x[i] * (2.0 * off + self.data[self.slot(i, i)] * x[i]);
        }
        total
    }

    /// Max absolute row sum, `‖A‖_∞` (equal to `‖A‖₁` by symmetry).
    pub fn inf_norm(&self) -> f64 {
        let mut row = vec![0.0; self.n];
        for i in 0..self.n {
            let jlo = i.saturating_sub(self.bw);
            for j in jlo..i {
                let a = self.data[self.slot(i, j)].abs();
                row[i] += a;
                row[j] += a;
            }
            row[i] += self.data[self.slot(i, i)].abs();
        }
        row.into_iter().fold(0.0, f64::max)
    }

    /// Copy with `diag[i]` added to the diagonal.
    pub fn with_added_diagonal(&self, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), self.n);
        let mut out = self.clone();
        for i in 0..self.n {
            let s = out.slot(i, i);
            out.data[s] += diag[i];
        }
        out
    }

    /// Principal submatrix on the (sorted, deduplicated) index set `keep`.
    /// Gaps can only shrink, so the original bandwidth still bounds the result.
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let m = keep.len();
        let bw = self.bw.min(m.saturating_sub(1));
        let mut out = Self::zeros(m, bw);
        for (ri, &i) in keep.iter().enumerate() {
            for (rj, &j) in keep.iter().enumerate().take(ri + 1).skip(ri.saturating_sub(bw)) {
                if i >= j && i - j <= self.bw {
                    let v = self.data[self.slot(i, j)];
                    if v != 0.0 {
                        out.set(ri, rj, v);
                    }
                }
            }
        }
        out
    }

    /// Banded Cholesky factorization A = L Lᵀ.
    /// Fails with `Error::Internal` if a pivot is not strictly positive.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        let mut l = vec![0.0f64; n * (bw + 1)];
        let slot = |i: usize, j: usize| i * (bw + 1) + (bw - (i - j));
        for i in 0..n {
            let jlo = i.saturating_sub(bw);
            for j in jlo..=i {
                let klo = jlo.max(j.saturating_sub(bw));
                let mut sum = self.data[self.slot(i, j)];
                for k in klo..j {
                    sum -= l[slot(i, k)] * l[slot(j, k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::Internal(format!(
                            "Cholesky pivot {sum:.3e} at row {i}; matrix is not positive definite"
                        )));
                    }
                    l[slot(i, i)] = sum.sqrt();
                } else {
                    l[slot(i, j)] = sum / l[slot(j, j)];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }
}

/// Lower-banded Cholesky factor; solves A x = b by two sweeps.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        // forward: L y = b
        for i in 0..self.n {
            let jlo = i.saturating_sub(self.bw);
            let mut sum = b[i];
            for j in jlo..i {
                sum -= self.l[self.slot(i, j)] * b[j];
            }
            b[i] = sum / self.l[self.slot(i, i)];
        }
        // backward: Lᵀ x = y
        for i in (0..self.n).rev() {
            let jhi = (i + self.bw).min(self.n - 1);
            let mut sum = b[i];
            for j in (i + 1)..=jhi {
                sum -= self.l[self.slot(j, i)] * b[j];
            }
            b[i] = sum / self.l[self.slot(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, off: f64, diag: f64) -> SymBandMatrix {
        let mut a = SymBandMatrix::zeros(n, 1);
        for i in 0..n {
            a.set(i, i, diag);
            if i > 0 {
                a.set(i, i - 1, off);
            }
        }
        a
    }

    #[test]
    fn matvec_matches_dense_reference() {
        let a = tridiag(5, -1.0, 2.0);
        let x = [1.0, -2.0, 3.0, 0.5, -1.0];
        let mut y = [0.0; 5];
        a.matvec(&x, &mut y);
        // dense tridiagonal apply done by hand
        let expect = [
            2.0 * 1.0 - (-2.0),
            -1.0 + 2.0 * (-2.0) - 3.0,
            2.0 + 2.0 * 3.0 - 0.5,
            -3.0 + 2.0 * 0.5 + 1.0,
            -0.5 + 2.0 * (-1.0),
        ];
        for (got, want) in y.iter().zip(expect) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = tridiag(64, -1.0, 2.0);
        let chol = a.cholesky().unwrap();
        let b: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = chol.solve(&b);
        let mut r = vec![0.0; 64];
        a.matvec(&x, &mut r);
        let err: f64 = r
            .iter()
            .zip(&b)
            .map(|(ri, bi)| (ri - bi) * (ri - bi))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-12, "residual {err}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = tridiag(3, -10.0, 1.0);
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn quad_form_agrees_with_matvec() {
        let a = tridiag(17, -1.0, 2.1);
        let x: Vec<f64> = (0..17).map(|i| ((i * i) as f64 * 0.01).cos()).collect();
        let mut y = vec![0.0; 17];
        a.matvec(&x, &mut y);
        let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((a.quad_form(&x) - dot).abs() < 1e-12);
    }

    #[test]
    fn principal_submatrix_keeps_entries() {
        let a = tridiag(6, -1.0, 2.0);
        let sub = a.principal_submatrix(&[0, 1, 3, 4]);
        assert_eq!(sub.n(), 4);
        assert_eq!(sub.get(1, 0), -1.0);
        // rows 1 and 3 were not adjacent, so their coupling vanishes
        assert_eq!(sub.get(2, 1), 0.0);
        assert_eq!(sub.get(3, 2), -1.0);
        assert_eq!(sub.get(2, 2), 2.0);
    }
}
