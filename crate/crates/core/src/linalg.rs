//! Symmetric skyline (profile) LDL^T factorization.
//!
//! The equilibrium solver needs repeated factorizations of a symmetric
//! matrix whose sparsity is a banded shell stiffness block bordered by one
//! dense constraint row. Profile storage handles both shapes in one
//! structure, and the signs of the pivots give the matrix inertia by
//! Sylvester's law, which is how equilibrium stability is classified.

use crate::num::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("zero or near-zero pivot at row {row}")]
    SingularPivot { row: usize },
    #[error("entry ({r}, {c}) outside the stored profile")]
    OutsideProfile { r: usize, c: usize },
}

/// Symmetric matrix in lower-triangle profile storage: row `i` stores the
/// contiguous entries from column `first[i]` through the diagonal.
#[derive(Clone, Debug)]
pub struct SkylineMatrix<T: Real> {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    vals: Vec<T>,
    factored: bool,
}

impl<T: Real> SkylineMatrix<T> {
    /// Allocate a zero matrix with the given row profile (`first[i] <= i`).
    pub fn new(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "profile start past the diagonal");
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        Self {
            n,
            first,
            offset,
            vals: vec![T::zero(); total],
            factored: false,
        }
    }

    /// Row profile where every row starts at column 0 (dense lower triangle).
    pub fn new_dense(n: usize) -> Self {
        Self::new((0..n).map(|_| 0).collect())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn reset(&mut self) {
        self.vals.fill(T::zero());
        self.factored = false;
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> Option<usize> {
        if c > r || c < self.first[r] {
            return None;
        }
        Some(self.offset[r] + (c - self.first[r]))
    }

    /// Accumulate `v` into entry `(r, c)`; symmetric, so only the lower
    /// triangle is stored and `(c, r)` addresses the same slot.
    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(!self.factored, "add into a factored matrix");
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        match self.idx(r, c) {
            Some(k) => self.vals[k] += v,
            None => panic!("entry ({r}, {c}) outside the stored profile"),
        }
    }

    /// In-place LDL^T without pivoting. Pivots smaller in magnitude than
    /// `pivot_floor` abort the factorization.
    pub fn factor(&mut self, pivot_floor: T) -> Result<(), LinalgError> {
        assert!(!self.factored);
        let n = self.n;
        let mut ld = vec![T::zero(); n];
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..i {
                let fj = self.first[j];
                let lo = fi.max(fj);
                // dot of this row's L*D scratch with row j's stored L
                let mut s = T::zero();
                if lo < j {
                    let lj = &self.vals
                        [self.offset[j] + (lo - fj)..self.offset[j] + (j - fj)];
                    let li = &ld[lo..j];
                    s = dot_fixed(li, lj);
                }
                let k = self.offset[i] + (j - fi);
                let num = self.vals[k] - s;
                let dj = self.vals[self.offset[j] + (j - self.first[j])];
                self.vals[k] = num / dj;
                ld[j] = num; // equals L(i,j) * D(j)
            }
            let mut d = self.vals[self.offset[i] + (i - fi)];
            for j in fi..i {
                let lij = self.vals[self.offset[i] + (j - fi)];
                d -= lij * ld[j];
            }
            if !d.is_finite() || d.abs() <= pivot_floor {
                return Err(LinalgError::SingularPivot { row: i });
            }
            self.vals[self.offset[i] + (i - fi)] = d;
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `A x = b` in place using the leading `m`-by-`m` block of the
    /// factorization. Using `m = n` solves the full system; a smaller `m` is
    /// valid because rows past `m` never influence the leading factor.
    pub fn solve_leading_in_place(&self, m: usize, b: &mut [T]) {
        assert!(self.factored, "solve before factor");
        assert!(m <= self.n && b.len() == m);
        for i in 0..m {
            let fi = self.first[i];
            let row = &self.vals[self.offset[i]..self.offset[i] + (i - fi)];
            b[i] -= dot_fixed(row, &b[fi..i]);
        }
        for i in 0..m {
            let di = self.vals[self.offset[i] + (i - self.first[i])];
            b[i] /= di;
        }
        for i in (0..m).rev() {
            let fi = self.first[i];
            let xi = b[i];
            let row = &self.vals[self.offset[i]..self.offset[i] + (i - fi)];
            for (l, x) in row.iter().zip(b[fi..i].iter_mut()) {
                *x -= *l * xi;
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        self.solve_leading_in_place(self.n, b);
    }

    /// Number of negative pivots among the leading `m` rows: the count of
    /// negative eigenvalues of the leading principal block (Sylvester).
    pub fn negative_pivots_leading(&self, m: usize) -> usize {
        assert!(self.factored);
        (0..m)
            .filter(|&i| self.vals[self.offset[i] + (i - self.first[i])] < T::zero())
            .count()
    }

    pub fn pivot(&self, i: usize) -> T {
        assert!(self.factored);
        self.vals[self.offset[i] + (i - self.first[i])]
    }

    /// Diagonal entry before factorization (raw assembled value).
    pub fn pivot_raw(&self, i: usize) -> T {
        self.vals[self.offset[i] + (i - self.first[i])]
    }
}

/// Four-lane dot product with a fixed summation order: fast and still
/// bitwise deterministic run to run.
#[inline]
fn dot_fixed<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// Build a row profile from element stencils: `first[dof]` is the smallest
/// dof sharing an element with it. `block` expands node indices into
/// consecutive dof blocks (3 for shells, 1 for scalar systems).
pub fn profile_from_stencils<I, S>(num_nodes: usize, block: usize, stencils: I) -> Vec<usize>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[usize]>,
{
    let mut min_neighbor: Vec<usize> = (0..num_nodes).collect();
    for stencil in stencils {
        let s = stencil.as_ref();
        if let Some(&lo) = s.iter().min() {
            for &v in s {
                if lo < min_neighbor[v] {
                    min_neighbor[v] = lo;
                }
            }
        }
    }
    let mut first = Vec::with_capacity(num_nodes * block);
    for (node, &mn) in min_neighbor.iter().enumerate() {
        for c in 0..block {
            let dof = node * block + c;
            first.push((mn * block).min(dof));
        }
    }
    first
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_from(entries: &[(usize, usize, f64)], n: usize) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for &(r, c, v) in entries {
            a[r][c] += v;
            if r != c {
                a[c][r] += v;
            }
        }
        a
    }

    #[test]
    fn solves_a_random_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, 4.0 + rng.gen::<f64>()));
            if i > 0 {
                entries.push((i, i - 1, rng.gen::<f64>() - 0.5));
            }
            if i > 3 {
                entries.push((i, i - 4, rng.gen::<f64>() - 0.5));
            }
        }
        let first: Vec<usize> = (0..n).map(|i: usize| i.saturating_sub(4)).collect();
        let mut m = SkylineMatrix::<f64>::new(first);
        for &(r, c, v) in &entries {
            m.add(r, c, v);
        }
        let dense = dense_from(&entries, n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| dense[i][j] * x_true[j]).sum())
            .collect();
        m.factor(0.0).unwrap();
        m.solve_in_place(&mut b);
        for (xa, xb) in b.iter().zip(&x_true) {
            assert_relative_eq!(xa, xb, max_relative = 1e-10, epsilon = 1e-12);
        }
        assert_eq!(m.negative_pivots_leading(n), 0);
    }

    #[test]
    fn inertia_counts_negative_eigenvalues() {
        // congruence-transform a signed diagonal: inertia must survive
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let signs: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let neg = signs.iter().filter(|&&s| s < 0.0).count();
        // A = B^T S B with B unit lower triangular and random off-diagonals
        let mut b = vec![vec![0.0; n]; n];
        for i in 0..n {
            b[i][i] = 1.0;
            for j in 0..i {
                b[i][j] = 0.4 * (rng.gen::<f64>() - 0.5);
            }
        }
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += b[k][i] * signs[k] * b[k][j];
                }
                a[i][j] = s;
            }
        }
        let mut m = SkylineMatrix::<f64>::new_dense(n);
        for i in 0..n {
            for j in 0..=i {
                m.add(i, j, a[i][j]);
            }
        }
        m.factor(0.0).unwrap();
        assert_eq!(m.negative_pivots_leading(n), neg);
    }

    #[test]
    fn bordered_row_factors_and_leading_solve_matches_block() {
        // banded SPD block with a dense last row, as the solver assembles
        let nb = 20;
        let n = nb + 1;
        let mut first: Vec<usize> = (0..nb).map(|i: usize| i.saturating_sub(2)).collect();
        first.push(0);
        let mut m = SkylineMatrix::<f64>::new(first);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut entries = Vec::new();
        for i in 0..nb {
            entries.push((i, i, 3.0 + rng.gen::<f64>()));
            if i > 1 {
                entries.push((i, i - 2, 0.5 * rng.gen::<f64>()));
            }
        }
        for j in 0..nb {
            entries.push((n - 1, j, rng.gen::<f64>() - 0.5));
        }
        for &(r, c, v) in &entries {
            m.add(r, c, v);
        }
        let dense = dense_from(&entries, n);
        m.factor(0.0).unwrap();
        // KKT-style inertia: SPD block with one constraint row gives one
        // negative pivot, at the border.
        assert_eq!(m.negative_pivots_leading(n), 1);
        assert_eq!(m.negative_pivots_leading(nb), 0);
        // leading solve uses only the block
        let x_true: Vec<f64> = (0..nb).map(|i| 1.0 + (i as f64).cos()).collect();
        let mut b: Vec<f64> = (0..nb)
            .map(|i| (0..nb).map(|j| dense[i][j] * x_true[j]).sum())
            .collect();
        m.solve_leading_in_place(nb, &mut b);
        for (xa, xb) in b.iter().zip(&x_true) {
            assert_relative_eq!(xa, xb, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_zero_pivot_is_reported() {
        let mut m = SkylineMatrix::<f64>::new_dense(2);
        m.add(0, 0, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0); // Schur complement is exactly zero
        let err = m.factor(0.0).unwrap_err();
        assert!(matches!(err, LinalgError::SingularPivot { row: 1 }));
    }

    #[test]
    fn profile_covers_stencils() {
        let stencils = vec![vec![0usize, 1, 2], vec![1, 2, 3], vec![2, 3, 5]];
        let first = profile_from_stencils(6, 2, stencils);
        assert_eq!(first[2 * 2], 0); // node 2 couples down to node 0
        assert_eq!(first[3 * 2], 2 * 1); // node 3 couples down to node 1
        assert_eq!(first[5 * 2], 2 * 2); // node 5 couples down to node 2
        assert_eq!(first[4 * 2], 4 * 2); // node 4 is isolated
    }
}
