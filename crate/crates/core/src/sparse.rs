//! Compressed sparse rows and a preconditioned conjugate-gradient solver for the
//! symmetric positive definite systems of the registration stages.

use nalgebra::DMatrix;

use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T: Real> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        // stable sort keeps the summation order of duplicates deterministic
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, T::one())).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).fold(T::zero(), |acc, (c, v)| acc + v * x[c]);
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// `Aᵀ A` for a matrix whose rows are short (e.g. a mesh Laplacian).
    pub fn gram(&self) -> Self {
        let mut triplets = Vec::new();
        for r in 0..self.n_rows {
            for (j, a) in self.row(r) {
                for (k, b) in self.row(r) {
                    triplets.push((j, k, a * b));
                }
            }
        }
        Self::from_triplets(self.n_cols, self.n_cols, triplets)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

pub trait Preconditioner<T: Real> {
    /// Writes `M⁻¹ r` into `z`.
    fn apply(&self, r: &[T], z: &mut [T]);
}

pub struct Jacobi<T: Real> {
    inv_diag: Vec<T>,
}

impl<T: Real> Jacobi<T> {
    pub fn new(a: &CsrMatrix<T>) -> Self {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| if d.abs() > T::TINY { T::one() / d } else { T::one() })
            .collect();
        Self { inv_diag }
    }
}

impl<T: Real> Preconditioner<T> for Jacobi<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        for ((z, &r), &d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
    }
}

/// Inverts the dense `b x b` diagonal blocks; falls back to scalar Jacobi for a singular block.
pub struct BlockJacobi<T: Real> {
    block: usize,
    inverses: Vec<DMatrix<T>>,
}

impl<T: Real> BlockJacobi<T> {
    pub fn new(a: &CsrMatrix<T>, block: usize) -> Self {
        assert!(block > 0 && a.n_rows() % block == 0);
        let inverses = (0..a.n_rows() / block)
            .map(|bi| {
                let base = bi * block;
                let mut m = DMatrix::zeros(block, block);
                for i in 0..block {
                    for (c, v) in a.row(base + i) {
                        if c >= base && c < base + block {
                            m[(i, c - base)] = v;
                        }
                    }
                }
                match m.clone().cholesky() {
                    Some(ch) => ch.inverse(),
                    None => DMatrix::from_diagonal(&m.diagonal().map(|d| {
                        if d.abs() > T::TINY {
                            T::one() / d
                        } else {
                            T::one()
                        }
                    })),
                }
            })
            .collect();
        Self { block, inverses }
    }
}

impl<T: Real> Preconditioner<T> for BlockJacobi<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        let b = self.block;
        for (bi, inv) in self.inverses.iter().enumerate() {
            for i in 0..b {
                z[bi * b + i] = (0..b).fold(T::zero(), |acc, j| acc + inv[(i, j)] * r[bi * b + j]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome<T> {
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` of the returned iterate (zero when `b = 0`).
    pub relative_residual: T,
    pub converged: bool,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Preconditioned conjugate gradients on a symmetric positive definite `a`, starting from `x`.
///
/// The reported residual is recomputed explicitly from `b − A x` at exit.
pub fn pcg<T: Real, P: Preconditioner<T>>(
    a: &CsrMatrix<T>,
    b: &[T],
    x: &mut [T],
    precond: &P,
    rel_tol: T,
    max_iter: usize,
) -> CgOutcome<T> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return CgOutcome { iterations: 0, relative_residual: T::zero(), converged: true };
    }
    let mut r = vec![T::zero(); n];
    a.mul_vec(x, &mut r);
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![T::zero(); n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    let mut iterations = 0;
    let target = rel_tol * b_norm;
    while iterations < max_iter {
        if dot(&r, &r).sqrt() <= target {
            break;
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= T::zero() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        // replace the recursive residual now and then to stop drift at tight tolerances
        if iterations % 50 == 0 {
            a.mul_vec(x, &mut r);
            for (ri, &bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
        }
        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let relative_residual = residual_norm(a, x, b) / b_norm;
    CgOutcome { iterations, relative_residual, converged: relative_residual <= rel_tol }
}

/// `‖b − A x‖`.
pub fn residual_norm<T: Real>(a: &CsrMatrix<T>, x: &[T], b: &[T]) -> T {
    let mut ax = vec![T::zero(); b.len()];
    a.mul_vec(x, &mut ax);
    ax.iter().zip(b).fold(T::zero(), |acc, (&l, &r)| acc + (r - l) * (r - l)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_spd(n: usize, seed: u64) -> CsrMatrix<f64> {
        let mut rng = crate::rng::seeded(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + rng.random::<f64>()));
            if i + 1 < n {
                let v = rng.random::<f64>() - 0.5;
                t.push((i, i + 1, v));
                t.push((i + 1, i, v));
            }
            if i + 7 < n {
                let v = 0.3 * (rng.random::<f64>() - 0.5);
                t.push((i, i + 7, v));
                t.push((i + 7, i, v));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5), (0, 1, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(1, 0), 0.0);
        let mut y = [0.0; 2];
        m.mul_vec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, [0.0, 4.5]);
    }

    #[test]
    fn gram_matches_dense_product() {
        let m = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 1, -0.5), (1, 1, 2.0), (2, 0, 3.0), (2, 2, 1.0)]);
        let d = m.to_dense();
        let expected = d.transpose() * &d;
        assert!((m.gram().to_dense() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn pcg_solves_against_dense_lu() {
        let a = random_spd(60, 3);
        let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let expected = a.to_dense().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for block in [None, Some(3)] {
            let mut x = vec![0.0; 60];
            let out = match block {
                None => pcg(&a, &b, &mut x, &Jacobi::new(&a), 1e-12, 500),
                Some(k) => pcg(&a, &b, &mut x, &BlockJacobi::new(&a, k), 1e-12, 500),
            };
            assert!(out.converged, "{out:?}");
            for i in 0..60 {
                assert!((x[i] - expected[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = random_spd(5, 1);
        let mut x = vec![1.0; 5];
        let out = pcg(&a, &[0.0; 5], &mut x, &Jacobi::new(&a), 1e-10, 10);
        assert!(out.converged);
        assert_eq!(x, vec![0.0; 5]);
    }
}
