use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::SparsityPattern;
use crate::error::{Error, Result};
use crate::ops;
use crate::ordering::pattern_io;

/// Lower-triangular matrix with values stored at the positions of a pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLowerTriangular {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseLowerTriangular {
    pub fn new(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, values })
    }

    pub(crate) fn from_parts(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), pattern.nnz());
        Self { pattern, values }
    }

    pub fn identity(pattern: Arc<SparsityPattern>) -> Self {
        let mut values = vec![0.0; pattern.nnz()];
        for i in 0..pattern.n() {
            values[pattern.diag_position(i)] = 1.0;
        }
        Self { pattern, values }
    }

    /// Takes the lower triangle of `m` restricted to `pattern`.
    pub fn from_dense(pattern: Arc<SparsityPattern>, m: &DMatrix<f64>) -> Self {
        let mut values = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.n() {
            values.extend(pattern.row(i).iter().map(|&j| m[(i, j)]));
        }
        Self { pattern, values }
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.pattern.diag_position(i)]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map(|p| self.values[p]).unwrap_or(0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            pattern: self.pattern.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `L x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n(), "factor mul_vec dimension");
        ops::add(self.values.len() as u64);
        let p = &*self.pattern;
        DVector::from_iterator(
            self.n(),
            (0..self.n()).map(|i| {
                p.row_range(i)
                    .map(|q| self.values[q] * x[p.column_index(q)])
                    .sum::<f64>()
            }),
        )
    }

    /// `L^T x`.
    pub fn mul_transpose_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n(), "factor mul_transpose_vec dimension");
        ops::add(self.values.len() as u64);
        let p = &*self.pattern;
        let mut out = DVector::zeros(self.n());
        for i in 0..self.n() {
            let xi = x[i];
            for q in p.row_range(i) {
                out[p.column_index(q)] += self.values[q] * xi;
            }
        }
        out
    }

    /// Solves `L x = b`, or `L^T x = b` when `transposed`.
    pub fn solve(&self, b: &DVector<f64>, transposed: bool) -> Result<DVector<f64>> {
        let n = self.n();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side of length {} for factor of size {n}",
                b.len()
            )));
        }
        ops::add(self.values.len() as u64);
        let p = &*self.pattern;
        let mut x = b.clone();
        if !transposed {
            for i in 0..n {
                let r = p.row_range(i);
                let d = r.end - 1;
                let mut s = x[i];
                for q in r.start..d {
                    s -= self.values[q] * x[p.column_index(q)];
                }
                let diag = self.values[d];
                if diag == 0.0 {
                    return Err(Error::ZeroDiagonal { row: i });
                }
                x[i] = s / diag;
            }
        } else {
            for i in (0..n).rev() {
                let r = p.row_range(i);
                let d = r.end - 1;
                let diag = self.values[d];
                if diag == 0.0 {
                    return Err(Error::ZeroDiagonal { row: i });
                }
                let xi = x[i] / diag;
                x[i] = xi;
                for q in r.start..d {
                    x[p.column_index(q)] -= self.values[q] * xi;
                }
            }
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n(), self.n());
        for i in 0..self.n() {
            for q in self.pattern.row_range(i) {
                m[(i, self.pattern.column_index(q))] = self.values[q];
            }
        }
        m
    }

    /// Pattern text followed by one line of values per row, aligned with the columns.
    pub fn to_text(&self) -> String {
        let mut s = self.pattern.to_text();
        for i in 0..self.n() {
            let r = self.pattern.row_range(i);
            let mut first = true;
            for v in &self.values[r] {
                if !first {
                    s.push(' ');
                }
                first = false;
                write!(s, "{v:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let (n, _) = pattern_io::parse_header(lines.first().copied())?;
        if lines.len() != 2 * n + 1 {
            return Err(Error::Parse {
                line: None,
                msg: format!("factor of size {n} needs {} non-empty lines, found {}", 2 * n + 1, lines.len()),
            });
        }
        let pattern_text: String = lines[..=n].iter().map(|(_, l)| format!("{l}\n")).collect();
        let pattern = Arc::new(SparsityPattern::from_text(&pattern_text)?);
        let mut values = Vec::with_capacity(pattern.nnz());
        for (i, &(ln, line)) in lines[n + 1..].iter().enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| Error::Parse {
                        line: Some(ln + 1),
                        msg: format!("`{t}` is not a number"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != pattern.row(i).len() {
                return Err(Error::Parse {
                    line: Some(ln + 1),
                    msg: format!("row {i} needs {} values", pattern.row(i).len()),
                });
            }
            values.extend(row);
        }
        Ok(Self { pattern, values })
    }
}
