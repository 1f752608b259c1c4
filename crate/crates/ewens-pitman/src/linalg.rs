//! Dense matrices just big enough for covariance work.
//!
//! Every matrix in this crate is symmetric and at most `(d+1) × (d+1)`
//! with `d ≤ 5`, so a straightforward row-major store plus cyclic Jacobi
//! eigenvalue sweeps and an unblocked Cholesky cover all needs. Nothing
//! here is tuned for large dimensions.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Largest absolute asymmetry `|a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Force exact symmetry by averaging mirrored entries.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi
    /// rotations. The input must be symmetric; asymmetry below 1e-12 is
    /// tolerated and symmetrized away.
    pub fn sym_eigenvalues(&self) -> Result<Vec<f64>> {
        if self.rows != self.cols {
            return Err(Error::domain("sym_eigenvalues", "matrix not square"));
        }
        if self.asymmetry() > 1e-12 {
            return Err(Error::domain(
                "sym_eigenvalues",
                format!("matrix asymmetric by {:e}", self.asymmetry()),
            ));
        }
        let n = self.rows;
        let mut a = self.clone();
        a.symmetrize();
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() < 1e-300 || off < 1e-30 * frobenius_sq(&a).max(1e-300) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).expect("eigenvalue NaN"));
        Ok(eig)
    }

    /// Smallest eigenvalue of a symmetric matrix.
    pub fn min_sym_eigenvalue(&self) -> Result<f64> {
        Ok(self.sym_eigenvalues()?[0])
    }

    /// Cholesky factor `L` with `L Lᵀ = self` for a symmetric
    /// positive-definite matrix. Fails on any non-positive pivot.
    pub fn cholesky(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::domain("cholesky", "matrix not square"));
        }
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::domain(
                            "cholesky",
                            format!("non-positive pivot {sum:e} at index {i}"),
                        ));
                    }
                    l[(i, j)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Ok(l)
    }

    /// Solve `self · x = b` for symmetric positive-definite `self`.
    pub fn solve_spd(&self, b: &[f64]) -> Result<Vec<f64>> {
        let l = self.cholesky()?;
        let n = self.rows;
        if b.len() != n {
            return Err(Error::domain("solve_spd", "dimension mismatch"));
        }
        // Forward then backward substitution.
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= l[(i, k)] * y[k];
            }
            y[i] = sum / l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..n {
                sum -= l[(k, i)] * x[k];
            }
            x[i] = sum / l[(i, i)];
        }
        Ok(x)
    }
}

fn frobenius_sq(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum()
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Compensated (Kahan) accumulator for long sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    /// Accumulator starting at `value`.
    pub fn new(value: f64) -> Self {
        Kahan {
            sum: value,
            carry: 0.0,
        }
    }

    /// Add one term.
    pub fn add(&mut self, term: f64) {
        let y = term - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    /// Current compensated value.
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated sum of a slice.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Kahan::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_hand_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = Matrix::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 1.0 });
        let eig = m.sym_eigenvalues().unwrap();
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_diagonal_passthrough() {
        let m = Matrix::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        let eig = m.sym_eigenvalues().unwrap();
        assert_eq!(eig, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_trace_and_det_preserved() {
        let m = Matrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + (i + j) as f64));
        let eig = m.sym_eigenvalues().unwrap();
        let trace: f64 = (0..4).map(|i| m[(i, i)]).sum();
        let eig_sum: f64 = eig.iter().sum();
        assert!((trace - eig_sum).abs() < 1e-12);
        // Hilbert-like matrix is positive definite.
        assert!(eig[0] > 0.0);
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let m = Matrix::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let b = vec![1.0, 2.0, 3.0];
        let x = m.solve_spd(&b).unwrap();
        for i in 0..3 {
            let mut r = 0.0;
            for j in 0..3 {
                r += m[(i, j)] * x[j];
            }
            assert!((r - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = -1.0;
        assert!(m.cholesky().is_err());
    }

    #[test]
    fn kahan_beats_naive_on_adversarial_sum() {
        let mut acc = Kahan::new(1.0);
        for _ in 0..10_000_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-9)).abs() < 1e-14);
    }
}
