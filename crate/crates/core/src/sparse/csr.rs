use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

/// Growable list of `(row, col, value)` contributions.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { entries: Vec::with_capacity(n) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }

    /// Appends `scale * block` with its origin at `(row0, col0)`.
    pub fn add_block(&mut self, block: &CsrMatrix, row0: usize, col0: usize, scale: f64) {
        for (i, j, v) in block.iter() {
            self.entries.push((row0 + i, col0 + j, scale * v));
        }
    }

    /// Appends `scale * blockᵀ` with its origin at `(row0, col0)`.
    pub fn add_block_transposed(&mut self, block: &CsrMatrix, row0: usize, col0: usize, scale: f64) {
        for (i, j, v) in block.iter() {
            self.entries.push((row0 + j, col0 + i, scale * v));
        }
    }

    pub fn extend(&mut self, other: Triplets) {
        self.entries.extend(other.entries);
    }
}

impl CsrMatrix {
    /// Builds a matrix from triplets, summing duplicate entries in the
    /// order they were supplied. Explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::IndexOutOfRange { row: r, col: c, nrows, ncols });
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (s, e) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(s..e);
            // stable: duplicates are summed in insertion order
            order.sort_by_key(|&k| cols[k]);
            for &k in &order {
                if indices.len() > indptr[r] && *indices.last().unwrap() == cols[k] {
                    *data.last_mut().unwrap() += vals[k];
                } else {
                    indices.push(cols[k]);
                    data.push(vals[k]);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows, ncols, indptr, indices, data })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), data: vec![1.0; n] }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.data[s..e])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|k| v[k]).unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Dimension(format!(
                "matvec with {}x{} matrix and vector of length {}",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        Ok((0..self.nrows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect())
    }

    /// `self * x`, panicking on dimension mismatch. For internal use where
    /// shapes are fixed by construction.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x).expect("dimension mismatch")
    }

    /// `selfᵀ * x`.
    pub fn mul_transposed(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j] += a * x[i];
            }
        }
        y
    }

    /// Quadratic form `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<(usize, usize, f64)> = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("indices in range")
    }

    /// `a * self + b * other`.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Dimension("adding matrices of different shapes".into()));
        }
        let mut t = Triplets::with_capacity(self.nnz() + other.nnz());
        t.add_block(self, 0, 0, a);
        t.add_block(other, 0, 0, b);
        Self::from_triplets(self.nrows, self.ncols, &t.entries)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= s);
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.iter() {
            d[i][j] += v;
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.iter().all(|(i, j, v)| (v - self.get(j, i)).abs() <= tol)
    }

    pub fn is_well_formed(&self) -> bool {
        self.indptr.len() == self.nrows + 1
            && self.indptr.windows(2).all(|w| w[0] <= w[1])
            && (0..self.nrows).all(|i| self.row(i).0.windows(2).all(|w| w[0] < w[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 0), 3.0);
    }

    #[test]
    fn empty_and_identity() {
        let z = CsrMatrix::from_triplets(3, 2, &[]).unwrap();
        assert!(z.is_well_formed());
        assert_eq!(z.matvec(&[1.0, 2.0]).unwrap(), vec![0.0; 3]);
        let i = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(i.matvec(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(i, CsrMatrix::identity(2));
    }

    #[test]
    fn rectangular_product() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
        assert!(a.matvec(&[1.0, 1.0]).is_err());
        assert_eq!(a.mul_transposed(&[1.0, 1.0]), vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]), Err(Error::IndexOutOfRange { .. })));
    }

    proptest! {
        #[test]
        fn triplet_assembly_matches_dense_sum(
            entries in proptest::collection::vec((0usize..6, 0usize..5, -10.0f64..10.0), 0..60),
            x in proptest::collection::vec(-5.0f64..5.0, 5),
        ) {
            let a = CsrMatrix::from_triplets(6, 5, &entries).unwrap();
            prop_assert!(a.is_well_formed());
            let mut dense = vec![vec![0.0; 5]; 6];
            for &(i, j, v) in &entries { dense[i][j] += v; }
            let y = a.matvec(&x).unwrap();
            for i in 0..6 {
                let yi: f64 = (0..5).map(|j| dense[i][j] * x[j]).sum();
                prop_assert!((y[i] - yi).abs() < 1e-10);
            }
            let at = a.transpose();
            prop_assert_eq!(at.transpose(), a);
        }
    }
}
