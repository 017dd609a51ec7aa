use std::sync::Arc;

use super::{CsrMatrix, SparseLowerTriangular, SparsityPattern, SymmetricEntries};
use crate::error::{Error, Result};
use crate::ops;

/// A symmetric matrix known only at the (lower-triangular) positions of a pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedEntries {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SelectedEntries {
    pub fn new(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch("selected entries do not match pattern".into()));
        }
        Ok(Self { pattern, values })
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl SymmetricEntries for SelectedEntries {
    fn dim(&self) -> usize {
        self.pattern.n()
    }

    /// Panics when `(i, j)` is not on the pattern: there is no value to return.
    fn entry(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let p = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) is not on the selected pattern"));
        self.values[p]
    }

    fn gather(&self, pattern: &SparsityPattern) -> Vec<f64> {
        if *pattern == *self.pattern {
            return self.values.clone();
        }
        let mut out = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.n() {
            out.extend(pattern.row(i).iter().map(|&j| self.entry(i, j)));
        }
        out
    }
}

/// `(E L)(E L)^T + Q` at the positions of `pattern`, computed from sparse row
/// products of `E L` without forming the dense product.
pub fn selected_gram<Q: SymmetricEntries + ?Sized>(
    e: &CsrMatrix,
    l_prev: &SparseLowerTriangular,
    q: &Q,
    pattern: &Arc<SparsityPattern>,
) -> Result<SelectedEntries> {
    if q.dim() != pattern.n() {
        return Err(Error::DimensionMismatch("Q and pattern sizes differ".into()));
    }
    let qv = q.gather(pattern);
    selected_gram_values(e, l_prev, &qv, pattern)
}

/// [`selected_gram`] with `Q` already gathered on the pattern.
pub fn selected_gram_values(
    e: &CsrMatrix,
    l_prev: &SparseLowerTriangular,
    q_on_pattern: &[f64],
    pattern: &Arc<SparsityPattern>,
) -> Result<SelectedEntries> {
    let n = pattern.n();
    if e.nrows() != n || e.ncols() != l_prev.n() || q_on_pattern.len() != pattern.nnz() {
        return Err(Error::DimensionMismatch(format!(
            "E is {}x{}, factor {}, pattern {}",
            e.nrows(),
            e.ncols(),
            l_prev.n(),
            n
        )));
    }
    let b = e.mul_lower(l_prev)?;
    let mut w = vec![0.0; b.ncols()];
    let mut out = Vec::with_capacity(pattern.nnz());
    let mut count = 0u64;
    for i in 0..n {
        let (bc, bv) = b.row(i);
        for (&c, &v) in bc.iter().zip(bv) {
            w[c] = v;
        }
        for q in pattern.row_range(i) {
            let j = pattern.column_index(q);
            let (jc, jv) = b.row(j);
            let dot: f64 = jc.iter().zip(jv).map(|(&c, &v)| w[c] * v).sum();
            count += jc.len() as u64;
            out.push(dot + q_on_pattern[q]);
        }
        for &c in bc {
            w[c] = 0.0;
        }
    }
    ops::add(count);
    Ok(SelectedEntries {
        pattern: pattern.clone(),
        values: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ordering::{build_dense_pattern, build_lowrank_pattern};
    use crate::sparse::hcf;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_inputs() {
        let p = Arc::new(build_lowrank_pattern(6, 2).unwrap());
        let l = SparseLowerTriangular::identity(p.clone());
        let z = DMatrix::<f64>::zeros(6, 6);
        let g = selected_gram(&CsrMatrix::identity(6), &l, &z, &p).unwrap();
        for i in 0..6 {
            for (q, &j) in p.row_range(i).zip(p.row(i)) {
                assert_eq!(g.values()[q], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_evolution_returns_q() {
        let p = Arc::new(build_dense_pattern(5).unwrap());
        let qm = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
        let l = hcf(&p, &DMatrix::<f64>::identity(5, 5)).unwrap();
        let zero = CsrMatrix::from_triplets(5, 5, vec![]).unwrap();
        let g = selected_gram(&zero, &l, &qm, &p).unwrap();
        assert_eq!(g.values(), qm.gather(&p).as_slice());
    }

    #[test]
    fn random_instance_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 8;
        let mut t = vec![];
        for i in 0..n {
            for _ in 0..3 {
                t.push((i, rng.gen_range(0..n), rng.gen_range(-1.0..1.0)));
            }
        }
        let e = CsrMatrix::from_triplets(n, n, t).unwrap();
        let p = Arc::new(build_lowrank_pattern(n, 3).unwrap());
        let lv: Vec<f64> = (0..p.nnz()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let l = SparseLowerTriangular::new(p.clone(), lv).unwrap();
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let qm = &g * g.transpose();
        let sel = selected_gram(&e, &l, &qm, &p).unwrap();
        let el = e.to_dense() * l.to_dense();
        let oracle = &el * el.transpose() + &qm;
        for i in 0..n {
            for (q, &j) in p.row_range(i).zip(p.row(i)) {
                assert!((sel.values()[q] - oracle[(i, j)]).abs() < 1e-12);
                assert_eq!(sel.entry(j, i), sel.values()[q]);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = Arc::new(build_dense_pattern(3).unwrap());
        let l = SparseLowerTriangular::identity(p.clone());
        let z = DMatrix::<f64>::zeros(3, 3);
        assert!(selected_gram(&CsrMatrix::identity(4), &l, &z, &p).is_err());
    }
}
