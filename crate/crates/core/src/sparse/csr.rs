use nalgebra::{DMatrix, DVector};

use super::SparseLowerTriangular;
use crate::error::{Error, Result};
use crate::ops;

/// General sparse matrix in compressed row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = t.iter().find(|(i, j, _)| *i >= nrows || *j >= ncols) {
            return Err(Error::DimensionMismatch(format!(
                "entry ({i}, {j}) outside {nrows}x{ncols}"
            )));
        }
        t.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; nrows + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            cols.push(j);
            vals.push(v);
            row_ptr[i + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = vec![];
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.nrows)
            .map(|i| self.row_ptr[i + 1] - self.row_ptr[i])
            .max()
            .unwrap_or(0)
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|k| v[k]).unwrap_or(0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols, "CsrMatrix::mul_vec dimension");
        ops::add(self.nnz() as u64);
        DVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum::<f64>()
            }),
        )
    }

    /// `A^T x`.
    pub fn mul_transpose_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.nrows, "CsrMatrix::mul_transpose_vec dimension");
        ops::add(self.nnz() as u64);
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                out[j] += a * x[i];
            }
        }
        out
    }

    /// `A L` for a sparse lower-triangular `L`, as a general sparse matrix.
    pub fn mul_lower(&self, l: &SparseLowerTriangular) -> Result<CsrMatrix> {
        let p = l.pattern();
        if self.ncols != p.n() {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by factor of size {}",
                self.nrows,
                self.ncols,
                p.n()
            )));
        }
        let lv = l.values();
        let mut acc = vec![0.0; p.n()];
        let mut hit = vec![false; p.n()];
        let mut touched = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut count = 0u64;
        for i in 0..self.nrows {
            let (ec, ev) = self.row(i);
            for (&k, &a) in ec.iter().zip(ev) {
                let r = p.row_range(k);
                count += r.len() as u64;
                for q in r {
                    let c = p.column_index(q);
                    if !hit[c] {
                        hit[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * lv[q];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                cols.push(c);
                vals.push(acc[c]);
                acc[c] = 0.0;
                hit[c] = false;
            }
            touched.clear();
            row_ptr.push(cols.len());
        }
        ops::add(count);
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: p.n(),
            row_ptr,
            cols,
            vals,
        })
    }

    /// `P A P^T` where `order[k]` is the old index placed at new position `k`.
    pub fn permute_symmetric(&self, order: &[usize]) -> Result<CsrMatrix> {
        if self.nrows != self.ncols || order.len() != self.nrows {
            return Err(Error::DimensionMismatch("symmetric permutation needs a square matrix".into()));
        }
        let inv = crate::ordering::invert_permutation(order);
        let mut t = Vec::with_capacity(self.nnz());
        for (new_i, &old_i) in order.iter().enumerate() {
            let (c, v) = self.row(old_i);
            t.extend(c.iter().zip(v).map(|(&j, &a)| (new_i, inv[j], a)));
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// Dense `A M` for a dense `M`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, m.ncols());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for col in 0..m.ncols() {
                out[(i, col)] = c.iter().zip(v).map(|(&j, &a)| a * m[(j, col)]).sum();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 1.0), (0, 2, 2.0), (2, 1, -1.0), (1, 1, 3.0), (0, 2, 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn duplicates_summed() {
        let a = sample();
        assert_eq!(a.get(0, 2), 2.5);
        assert_eq!(a.nnz(), 4);
    }

    #[test]
    fn products_match_dense() {
        let a = sample();
        let d = a.to_dense();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(a.mul_vec(&x), &d * &x);
        assert_eq!(a.mul_transpose_vec(&x), d.transpose() * &x);
    }

    #[test]
    fn symmetric_permutation() {
        let a = sample();
        let order = [2, 0, 1];
        let p = a.permute_symmetric(&order).unwrap().to_dense();
        let d = a.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p[(i, j)], d[(order[i], order[j])]);
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }
}
