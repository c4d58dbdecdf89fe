//! Small dense symmetric matrices.
//!
//! Gram blocks are `(deg + 1) x (deg + 1)`, so everything here is plain
//! row-major storage with Cholesky and cyclic Jacobi; no BLAS.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Scalar> SymMatrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![S::zero(); n * n] }
    }

    pub fn scaled_identity(n: usize, c: S) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = c;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `self += w * v v^T`
    pub fn rank_one_update(&mut self, v: &[S], w: S) {
        debug_assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let wi = w * v[i];
            if wi == S::zero() {
                continue;
            }
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r = *r + wi * vj;
            }
        }
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == S::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn trace(&self) -> S {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn cholesky(&self) -> Option<Cholesky<S>> {
        Cholesky::new(self)
    }

    /// Max row sum of `|self * other - I|`.
    pub fn identity_residual(&self, other: &Self) -> S {
        let p = self.mul(other);
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| {
                        let e = if i == j { S::one() } else { S::zero() };
                        (p.get(i, j) - e).abs()
                    })
                    .sum::<S>()
            })
            .fold(S::zero(), S::max)
    }

    /// Eigenvalues in ascending order (cyclic Jacobi; the matrix is assumed
    /// symmetric).
    pub fn eigenvalues(&self) -> Vec<S> {
        let n = self.n;
        let mut a = self.data.clone();
        let tol = S::epsilon();
        for _sweep in 0..100 {
            let mut off = S::zero();
            let mut diag = S::zero();
            for i in 0..n {
                diag = diag + a[i * n + i] * a[i * n + i];
                for j in (i + 1)..n {
                    off = off + a[i * n + j] * a[i * n + j];
                }
            }
            if off <= tol * tol * diag || off == S::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == S::zero() {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (S::of(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                    let c = S::one() / (t * t + S::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<S> = (0..n).map(|i| a[i * n + i]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
        ev
    }

    pub fn min_eigenvalue(&self) -> S {
        self.eigenvalues().first().copied().unwrap_or_else(S::infinity)
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky<S> {
    n: usize,
    l: Vec<S>,
}

impl<S: Scalar> Cholesky<S> {
    pub fn new(a: &SymMatrix<S>) -> Option<Self> {
        let n = a.n;
        let mut l = vec![S::zero(); n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d = d - l[j * n + k] * l[j * n + k];
            }
            if !(d > S::zero()) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Self { n, l })
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> SymMatrix<S> {
        let n = self.n;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![S::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = S::zero());
            e[j] = S::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        // symmetrize against round-off
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (inv.get(i, j) + inv.get(j, i)) * S::of(0.5);
                inv.set(i, j, v);
                inv.set(j, i, v);
            }
        }
        inv
    }

    pub fn log_det(&self) -> S {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<S>() * S::of(2.0)
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm_sq<S: Scalar>(a: &[S]) -> S {
    dot(a, a)
}
