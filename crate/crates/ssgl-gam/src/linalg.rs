//! Minimal dense linear algebra for the small per-group blocks (n x d
//! with d around 6). Column-major storage so that the hot solver ops
//! (column dot products) stay contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    nrows: usize,
    ncols: usize,
    /// Column-major, length nrows * ncols.
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Mat {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from a row-major closure.
    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(nrows, ncols);
        for j in 0..ncols {
            for i in 0..nrows {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nrows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.nrows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (yi, aij) in y.iter_mut().zip(self.col(j)) {
                *yi += aij * xj;
            }
        }
        y
    }

    /// y = A' x.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        (0..self.ncols).map(|j| dot(self.col(j), x)).collect()
    }

    /// A' diag(w) A, a small ncols x ncols Gram matrix.
    pub fn gram_weighted(&self, w: &[f64]) -> Mat {
        let d = self.ncols;
        let mut g = Mat::zeros(d, d);
        for a in 0..d {
            let ca = self.col(a);
            for b in a..d {
                let cb = self.col(b);
                let mut s = 0.0;
                for i in 0..self.nrows {
                    s += ca[i] * w[i] * cb[i];
                }
                g.set(a, b, s);
                g.set(b, a, s);
            }
        }
        g
    }

    /// A' A.
    pub fn gram(&self) -> Mat {
        let d = self.ncols;
        let mut g = Mat::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let s = dot(self.col(a), self.col(b));
                g.set(a, b, s);
                g.set(b, a, s);
            }
        }
        g
    }

    /// C = A B.
    pub fn matmul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.ncols, other.nrows);
        let mut c = Mat::zeros(self.nrows, other.ncols);
        for j in 0..other.ncols
        {
            let col = self.matvec(other.col(j));
            c.col_mut(j).copy_from_slice(&col);
        }
        c
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Thin QR by modified Gram-Schmidt with one reorthogonalization pass.
/// Returns (Q, R) with Q'Q = I (nrows x ncols) and R upper triangular.
pub fn qr_thin(a: &Mat) -> Result<(Mat, Mat)> {
    let (n, d) = (a.nrows(), a.ncols());
    if n < d {
        return Err(Error::argument("qr_thin requires nrows >= ncols"));
    }
    let mut q = a.clone();
    let mut r = Mat::zeros(d, d);
    for j in 0..d {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = dot(q.col(k), q.col(j));
                r.set(k, j, r.get(k, j) + proj);
                let qk = q.col(k).to_vec();
                for (x, y) in q.col_mut(j).iter_mut().zip(&qk) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = norm2(q.col(j));
        if nrm < 1e-10 {
            return Err(Error::numerical(format!(
                "rank-deficient block: column {j} nearly dependent in QR"
            )));
        }
        r.set(j, j, nrm);
        for x in q.col_mut(j) {
            *x /= nrm;
        }
    }
    Ok((q, r))
}

/// Solve R x = b for upper triangular R.
pub fn solve_upper(r: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let d = r.ncols();
    debug_assert_eq!(b.len(), d);
    let mut x = b.to_vec();
    for i in (0..d).rev() {
        for j in (i + 1)..d {
            x[i] -= r.get(i, j) * x[j];
        }
        let rii = r.get(i, i);
        if rii.abs() < 1e-14 {
            return Err(Error::numerical("singular triangular solve"));
        }
        x[i] /= rii;
    }
    Ok(x)
}

/// Largest eigenvalue of a small symmetric PSD matrix by power iteration.
pub fn sym_eig_max(g: &Mat) -> f64 {
    let d = g.ncols();
    if d == 0 {
        return 0.0;
    }
    // deterministic start with nonzero overlap on every eigenvector direction
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64) * 0.1).collect();
    let nrm = norm2(&v);
    for x in &mut v {
        *x /= nrm;
    }
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = g.matvec(&v);
        let nrm = norm2(&w);
        if nrm == 0.0 {
            return 0.0;
        }
        let next: Vec<f64> = w.iter().map(|x| x / nrm).collect();
        let l_next = dot(&next, &g.matvec(&next));
        let done = (l_next - lambda).abs() <= 1e-12 * l_next.abs().max(1.0);
        v = next;
        lambda = l_next;
        if done {
            break;
        }
    }
    lambda
}

/// Spectral norm (largest singular value) of a matrix.
pub fn spectral_norm(a: &Mat) -> f64 {
    sym_eig_max(&a.gram()).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_gram() {
        let a = Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        // columns: (0,1,2), (2,3,4)
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![2.0, 4.0, 6.0]);
        assert_eq!(a.tr_matvec(&[1.0, 1.0, 1.0]), vec![3.0, 9.0]);
        let g = a.gram();
        assert_eq!(g.get(0, 0), 5.0);
        assert_eq!(g.get(0, 1), 11.0);
        assert_eq!(g.get(1, 1), 29.0);
    }

    #[test]
    fn qr_reconstructs() {
        let a = Mat::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + if i == j { 2.0 } else { 0.0 });
        let (q, r) = qr_thin(&a).unwrap();
        let qr = q.matmul(&r);
        for j in 0..3 {
            for i in 0..5 {
                assert!((qr.get(i, j) - a.get(i, j)).abs() < 1e-12);
            }
        }
        let qtq = q.gram();
        for a_ in 0..3 {
            for b in 0..3 {
                let want = if a_ == b { 1.0 } else { 0.0 };
                assert!((qtq.get(a_, b) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eig_max_of_diagonal() {
        let mut g = Mat::zeros(3, 3);
        g.set(0, 0, 1.0);
        g.set(1, 1, 4.0);
        g.set(2, 2, 2.5);
        assert!((sym_eig_max(&g) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_scaled_identity() {
        let mut a = Mat::identity(4);
        for j in 0..4 {
            for x in a.col_mut(j) {
                *x *= 2.0;
            }
        }
        assert!((spectral_norm(&a) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn upper_solve() {
        let mut r = Mat::zeros(2, 2);
        r.set(0, 0, 2.0);
        r.set(0, 1, 1.0);
        r.set(1, 1, 4.0);
        let x = solve_upper(&r, &[4.0, 8.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }
}
