//! Small dense linear algebra for the toy models: products, a one-sided
//! Jacobi SVD, pseudo-inverse least squares and orthonormalization.

use rand::Rng;
use rand_distr::StandardNormal;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| (i == j) as u8 as f64)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Self {
        Self::from_fn(self.rows, range.len(), |i, j| self.get(i, range.start + j))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Thin singular value decomposition `A = U·diag(s)·Vᵀ` with `s` sorted in
/// descending order. `U` is rows × r and `V` is cols × r, r = min(rows, cols).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

/// One-sided Jacobi (Hestenes) SVD.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows < a.cols {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = (a.rows, a.cols);
    // Work on columns stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| (i == j) as u8 as f64).collect())
        .collect();
    let dotp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();

    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dotp(&cols[p], &cols[p]);
                let beta = dotp(&cols[q], &cols[q]);
                let gamma = dotp(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
                let (lo, hi) = v.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dotp(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        for i in 0..m {
            u.set(
                i,
                k,
                if norms[j] > 0.0 {
                    cols[j][i] / norms[j]
                } else {
                    0.0
                },
            );
        }
        for i in 0..n {
            vm.set(i, k, v[j][i]);
        }
    }
    Svd { u, s, v: vm }
}

pub fn singular_values(a: &Matrix) -> Vec<f64> {
    svd(a).s
}

pub fn sigma_max(a: &Matrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// min over unit x of ‖A·x‖; zero whenever A has more columns than rows.
pub fn sigma_min(a: &Matrix) -> f64 {
    if a.cols > a.rows || a.cols == 0 {
        return 0.0;
    }
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Moore–Penrose pseudo-inverse, dropping singular values below
/// `1e-12 · s_max`.
pub fn pinv(a: &Matrix) -> Matrix {
    let Svd { u, s, v } = svd(a);
    let cutoff = 1e-12 * s.first().copied().unwrap_or(0.0);
    let mut out = Matrix::zeros(a.cols, a.rows);
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        for i in 0..a.cols {
            let vik = v.get(i, k) / sk;
            for j in 0..a.rows {
                out.data[i * a.rows + j] += vik * u.get(j, k);
            }
        }
    }
    out
}

/// Minimum-norm X minimizing ‖A·X − B‖_F.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Matrix {
    pinv(a).matmul(b)
}

/// Orthonormal basis of the column span of `a` by twice-applied modified
/// Gram–Schmidt; columns that are numerically dependent are dropped.
pub fn orthonormalize(a: &Matrix) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..a.cols {
        let mut c = a.column(j);
        let original = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = b.iter().zip(&c).map(|(x, y)| x * y).sum();
                for (ci, bi) in c.iter_mut().zip(b) {
                    *ci -= proj * bi;
                }
            }
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-10 * original.max(f64::MIN_POSITIVE) {
            basis.push(c.iter().map(|v| v / norm).collect());
        }
    }
    Matrix::from_fn(a.rows, basis.len(), |i, j| basis[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn svd_reconstructs_and_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (m, n) in [(5, 3), (3, 5), (8, 8), (1, 4), (20, 7)] {
            let a = Matrix::gaussian(m, n, &mut rng);
            let d = svd(&a);
            let r = d.s.len();
            let us = Matrix::from_fn(m, r, |i, k| d.u.get(i, k) * d.s[k]);
            let back = us.matmul(&d.v.transpose());
            assert!(back.sub(&a).frobenius() < 1e-10 * a.frobenius());

            let na = nalgebra::DMatrix::from_row_slice(m, n, &a.data);
            let mut reference: Vec<f64> = na.singular_values().iter().copied().collect();
            reference.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in d.s.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-10 * reference[0], "{m}x{n}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn rank_deficient_and_wide_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 0.0]]);
        assert!(sigma_min(&a) < 1e-12);
        assert_eq!(sigma_min(&Matrix::identity(3).columns(0..2).transpose()), 0.0);
        assert!((sigma_min(&Matrix::identity(4)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix::gaussian(12, 4, &mut rng);
        let x = Matrix::gaussian(4, 3, &mut rng);
        let b = a.matmul(&x);
        assert!(least_squares(&a, &b).sub(&x).frobenius() < 1e-10);
    }

    #[test]
    fn orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = orthonormalize(&Matrix::gaussian(10, 6, &mut rng));
        let gram = q.transpose().matmul(&q);
        assert!(gram.sub(&Matrix::identity(6)).frobenius() < 1e-12);
    }
}
