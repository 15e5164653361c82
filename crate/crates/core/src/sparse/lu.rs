use super::csr::CsrMatrix;
use super::ordering::nested_dissection;
use crate::error::{Error, Result};

/// Relative threshold under which the diagonal candidate is passed over
/// in favour of the largest entry of the column.
const PIVOT_THRESHOLD: f64 = 0.1;

/// Column-compressed storage used for the factors.
#[derive(Clone, Debug, Default)]
struct Csc {
    colptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

impl Csc {
    fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.colptr[j], self.colptr[j + 1]);
        (&self.rows[s..e], &self.vals[s..e])
    }
}

/// Sparse LU factors `P B = L U` of the symmetrically permuted matrix
/// `B = A(perm, perm)`, computed by left-looking elimination with
/// threshold partial pivoting.
#[derive(Clone, Debug)]
pub struct LuFactors {
    n: usize,
    perm: Vec<usize>,
    /// `pinv[i]` is the pivot position of row `i` of `B`.
    pinv: Vec<usize>,
    /// Unit lower factor, diagonal stored first in each column, rows in
    /// pivot numbering.
    l: Csc,
    /// Upper factor, diagonal stored last in each column.
    u: Csc,
    /// Row and column equilibration of `A` applied before elimination.
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

impl LuFactors {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = nested_dissection(a);
        Self::factor_with_ordering(a, perm)
    }

    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("LU of non-square {}x{} matrix", n, a.ncols())));
        }
        if perm.len() != n {
            return Err(Error::Dimension("ordering length differs from matrix size".into()));
        }
        let (row_scale, col_scale) = equilibrate(a);
        let scaled: Vec<_> = a.iter().map(|(i, j, v)| (i, j, row_scale[i] * v * col_scale[j])).collect();
        let a = &CsrMatrix::from_triplets(n, n, &scaled)?;
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        // columns of B = A(perm, perm): column j of B is column perm[j] of A
        let at = a.transpose();
        let bcol = |j: usize| {
            let (r, v) = at.row(perm[j]);
            r.iter().map(|&i| iperm[i]).zip(v.iter().copied())
        };
        let scale = a.max_abs();
        let tiny = scale * 1e-14;

        const UNSET: usize = usize::MAX;
        let mut pinv = vec![UNSET; n];
        let mut l = Csc { colptr: vec![0], ..Default::default() };
        let mut u = Csc { colptr: vec![0], ..Default::default() };
        let mut x = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut pattern: Vec<usize> = Vec::with_capacity(n);
        let mut stack: Vec<(usize, usize)> = Vec::new();

        for k in 0..n {
            // symbolic: reach of column k through the graph of L
            pattern.clear();
            for (i, _) in bcol(k) {
                if mark[i] == k {
                    continue;
                }
                mark[i] = k;
                stack.push((i, 0));
                while let Some(&(node, start)) = stack.last() {
                    let j = pinv[node];
                    let mut pos = start;
                    let mut child = None;
                    if j != UNSET {
                        let (rows, _) = l.col(j);
                        while pos < rows.len() {
                            let w = rows[pos];
                            pos += 1;
                            if mark[w] != k {
                                child = Some(w);
                                break;
                            }
                        }
                    }
                    stack.last_mut().unwrap().1 = pos;
                    match child {
                        Some(w) => {
                            mark[w] = k;
                            stack.push((w, 0));
                        }
                        None => {
                            stack.pop();
                            pattern.push(node);
                        }
                    }
                }
            }
            // numeric: sparse triangular solve in topological order
            for (i, v) in bcol(k) {
                x[i] = v;
            }
            for &i in pattern.iter().rev() {
                let j = pinv[i];
                if j == UNSET {
                    continue;
                }
                let xi = x[i];
                let (rows, vals) = l.col(j);
                for (&r, &v) in rows.iter().zip(vals).skip(1) {
                    x[r] -= v * xi;
                }
            }
            let mut best = UNSET;
            let mut amax = -1.0f64;
            for &i in pattern.iter().rev() {
                if pinv[i] == UNSET {
                    if x[i].abs() > amax {
                        amax = x[i].abs();
                        best = i;
                    }
                } else {
                    u.rows.push(pinv[i]);
                    u.vals.push(x[i]);
                }
            }
            if best == UNSET || amax <= tiny {
                return Err(Error::Singular { column: perm[k], pivot: amax.max(0.0) });
            }
            if pinv[k] == UNSET && mark[k] == k && x[k].abs() >= PIVOT_THRESHOLD * amax {
                best = k;
            }
            let pivot = x[best];
            u.rows.push(k);
            u.vals.push(pivot);
            u.colptr.push(u.rows.len());
            pinv[best] = k;
            l.rows.push(best);
            l.vals.push(1.0);
            for &i in pattern.iter().rev() {
                if pinv[i] == UNSET {
                    l.rows.push(i);
                    l.vals.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
            l.colptr.push(l.rows.len());
        }
        for r in &mut l.rows {
            *r = pinv[*r];
        }
        Ok(Self { n, perm, pinv, l, u, row_scale, col_scale })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries in `L + U`.
    pub fn nnz(&self) -> usize {
        self.l.vals.len() + self.u.vals.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Dimension(format!("rhs of length {} for system of size {}", b.len(), self.n)));
        }
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[self.pinv[i]] = self.row_scale[self.perm[i]] * b[self.perm[i]];
        }
        for j in 0..n {
            let (rows, vals) = self.l.col(j);
            let yj = y[j];
            if yj != 0.0 {
                for (&r, &v) in rows.iter().zip(vals).skip(1) {
                    y[r] -= v * yj;
                }
            }
        }
        for j in (0..n).rev() {
            let (rows, vals) = self.u.col(j);
            let m = rows.len() - 1;
            y[j] /= vals[m];
            let yj = y[j];
            if yj != 0.0 {
                for (&r, &v) in rows[..m].iter().zip(&vals[..m]) {
                    y[r] -= v * yj;
                }
            }
        }
        let mut x = vec![0.0; n];
        for j in 0..n {
            x[self.perm[j]] = self.col_scale[self.perm[j]] * y[j];
        }
        Ok(x)
    }
}

/// Scalings making every row and then every column of `diag(r) A diag(c)`
/// have unit max-norm. Empty rows or columns keep scale 1.
fn equilibrate(a: &CsrMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut r = vec![0.0f64; a.nrows()];
    for (i, _, v) in a.iter() {
        r[i] = r[i].max(v.abs());
    }
    for v in &mut r {
        *v = if *v > 0.0 { 1.0 / *v } else { 1.0 };
    }
    let mut c = vec![0.0f64; a.ncols()];
    for (i, j, v) in a.iter() {
        c[j] = c[j].max((r[i] * v).abs());
    }
    for v in &mut c {
        *v = if *v > 0.0 { 1.0 / *v } else { 1.0 };
    }
    (r, c)
}
