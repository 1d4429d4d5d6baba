//! Small dense matrices for closed-form fixed points and cross-checks.
//!
//! Deliberately naive (row-major storage, partial-pivot LU): these run at
//! desk scale where clarity beats speed, and they serve as the independent
//! reference path for everything the sparse code computes.

use crate::math::MathError;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Accumulates duplicate entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, MathError> {
        let mut m = Self::zeros(n);
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(MathError::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside a {n} x {n} matrix"
                )));
            }
            m.data[r * n + c] += v;
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n..(r + 1) * self.n]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for r in 0..self.n {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out[r] = acc;
        }
        out
    }

    /// Solve `self * x = b` by LU with partial pivoting. `self` is copied.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, MathError> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].abs();
            for r in (k + 1)..n {
                let v = a[r * n + k].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            const PIVOT_FLOOR: f64 = 1e-300;
            if best < PIVOT_FLOOR {
                return Err(MathError::Singular(PIVOT_FLOOR, k));
            }
            if piv != k {
                for c in 0..n {
                    a.swap(k * n + c, piv * n + c);
                }
                x.swap(k, piv);
            }
            let d = a[k * n + k];
            for r in (k + 1)..n {
                let m = a[r * n + k] / d;
                if m == 0.0 {
                    continue;
                }
                a[r * n + k] = 0.0;
                for c in (k + 1)..n {
                    a[r * n + c] -= m * a[k * n + c];
                }
                x[r] -= m * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for c in (k + 1)..n {
                acc -= a[k * n + c] * x[c];
            }
            x[k] = acc / a[k * n + k];
        }
        Ok(x)
    }
}
