use std::sync::Arc;

use nalgebra::DMatrix;

use super::{SparseLowerTriangular, SparsityPattern, SymmetricEntries, NONE};
use crate::error::{Error, Result};
use crate::ops;

/// A pivot fails when its argument drops below this fraction of the original diagonal.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Cholesky factorization restricted to `pattern`: entries off the pattern are
/// forced to zero, and only entries of `a` on the pattern are read.
pub fn hcf<A: SymmetricEntries + ?Sized>(
    pattern: &Arc<SparsityPattern>,
    a: &A,
) -> Result<SparseLowerTriangular> {
    hcf_with_jitter(pattern, a, 0.0)
}

/// [`hcf`] with `jitter * A_ii` added to every diagonal entry first.
pub fn hcf_with_jitter<A: SymmetricEntries + ?Sized>(
    pattern: &Arc<SparsityPattern>,
    a: &A,
    jitter: f64,
) -> Result<SparseLowerTriangular> {
    if a.dim() != pattern.n() {
        return Err(Error::DimensionMismatch(format!(
            "matrix of size {} against pattern of size {}",
            a.dim(),
            pattern.n()
        )));
    }
    let mut values = a.gather(pattern);
    if jitter != 0.0 {
        for i in 0..pattern.n() {
            values[pattern.diag_position(i)] *= 1.0 + jitter;
        }
    }
    hcf_values(pattern, values)
}

/// Factorizes values already aligned with `pattern` storage.
pub fn hcf_values(pattern: &Arc<SparsityPattern>, mut v: Vec<f64>) -> Result<SparseLowerTriangular> {
    let p = &**pattern;
    if v.len() != p.nnz() {
        return Err(Error::DimensionMismatch("values do not match the pattern".into()));
    }
    let mut pos = vec![NONE; p.n()];
    let mut count = 0u64;
    for i in 0..p.n() {
        let r = p.row_range(i);
        let d = r.end - 1;
        for q in r.clone() {
            pos[p.column_index(q)] = q;
        }
        for q in r.start..d {
            let j = p.column_index(q);
            let rj = p.row_range(j);
            let dj = rj.end - 1;
            let mut s = v[q];
            for t in rj.start..dj {
                let pk = pos[p.column_index(t)];
                if pk != NONE {
                    s -= v[pk] * v[t];
                }
            }
            count += (dj - rj.start) as u64;
            v[q] = s / v[dj];
        }
        let aii = v[d];
        let mut s = aii;
        for q in r.start..d {
            s -= v[q] * v[q];
        }
        count += (d - r.start) as u64;
        check_pivot(i, s, aii)?;
        v[d] = s.sqrt();
        for q in r {
            pos[p.column_index(q)] = NONE;
        }
    }
    ops::add(count);
    Ok(SparseLowerTriangular::from_parts(pattern.clone(), v))
}

#[inline]
fn check_pivot(row: usize, s: f64, aii: f64) -> Result<()> {
    if s > 0.0 && s >= PIVOT_TOLERANCE * aii && s.is_finite() {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { row, pivot: s })
    }
}

/// Entries of `L^{-1}` on the pattern of `L`.
///
/// Exact when the pattern is closed under elimination; otherwise the
/// column recursions drop every off-pattern contribution.
pub fn inverse_on_pattern(l: &SparseLowerTriangular) -> SparseLowerTriangular {
    let p = &**l.pattern();
    let lv = l.values();
    let n = p.n();
    let mut out = vec![0.0; p.nnz()];
    let mut w = vec![0.0; n];
    let mut count = 0u64;
    for j in 0..n {
        let rows = p.col(j);
        let positions = p.col_positions(j);
        w[j] = 1.0 / lv[positions[0]];
        out[positions[0]] = w[j];
        for (&i, &pos) in rows.iter().zip(positions).skip(1) {
            let r = p.row_range(i);
            let d = r.end - 1;
            let mut s = 0.0;
            for q in r.start..d {
                s += lv[q] * w[p.column_index(q)];
            }
            count += (d - r.start) as u64;
            w[i] = -s / lv[d];
            out[pos] = w[i];
        }
        for &i in rows {
            w[i] = 0.0;
        }
    }
    ops::add(count);
    SparseLowerTriangular::from_parts(l.pattern().clone(), out)
}

/// Filtering factor from a forecast factor.
///
/// With forecast covariance `L L^T` and observations of grid rows `observed`
/// with noise precisions `noise_precision`, the posterior precision is
/// `M = L^{-T} L^{-1} + H^T R^{-1} H`. This computes the order-reversed
/// Cholesky factor `M = U U^T` (`U` upper triangular) restricted to the pattern
/// of `L^T`, and returns `U^{-T}`, whose outer product approximates `M^{-1}` and
/// equals it for a dense pattern.
pub fn filter_update_factor(
    l_fc: &SparseLowerTriangular,
    observed: &[usize],
    noise_precision: &[f64],
) -> Result<SparseLowerTriangular> {
    let pattern = l_fc.pattern().clone();
    let p = &*pattern;
    let n = p.n();
    if observed.len() != noise_precision.len() {
        return Err(Error::DimensionMismatch("one noise precision per observation".into()));
    }
    if let Some(&bad) = observed.iter().find(|&&i| i >= n) {
        return Err(Error::DimensionMismatch(format!("observation of row {bad} outside state of size {n}")));
    }
    if let Some(r) = noise_precision.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput(format!("noise precision {r} must be positive")));
    }
    if observed.is_empty() {
        return Ok(l_fc.clone());
    }

    let inv = inverse_on_pattern(l_fc);
    let iv = inv.values();

    // Lower-stored precision: M[(b, a)] for b >= a, accumulated row by row of L^{-1}.
    let mut m = vec![0.0; p.nnz()];
    let mut pos = vec![NONE; n];
    let mut count = 0u64;
    for k in 0..n {
        let rk = p.row_range(k);
        for qb in rk.clone() {
            let b = p.column_index(qb);
            let rb = p.row_range(b);
            for t in rb.clone() {
                pos[p.column_index(t)] = t;
            }
            let vb = iv[qb];
            for qa in rk.start..=qb {
                let target = pos[p.column_index(qa)];
                if target != NONE {
                    m[target] += iv[qa] * vb;
                }
            }
            count += (qb + 1 - rk.start + rb.len()) as u64;
            for t in rb {
                pos[p.column_index(t)] = NONE;
            }
        }
    }
    for (&i, &r) in observed.iter().zip(noise_precision) {
        m[p.diag_position(i)] += r;
    }

    // Reverse factorization M = W^T W with W lower on the pattern (W = U^T),
    // processed from the last column backwards.
    let mut w = m;
    let mut cpos = vec![NONE; n];
    for i in (0..n).rev() {
        let rows = p.col(i);
        let positions = p.col_positions(i);
        for (&r, &q) in rows.iter().zip(positions) {
            cpos[r] = q;
        }
        for idx in (1..rows.len()).rev() {
            let j = rows[idx];
            let q = positions[idx];
            let mut s = w[q];
            let cj = p.col(j);
            let cjp = p.col_positions(j);
            for (&k, &pk) in cj.iter().zip(cjp).skip(1) {
                let pi = cpos[k];
                if pi != NONE {
                    s -= w[pi] * w[pk];
                }
            }
            count += (cj.len() - 1) as u64;
            w[q] = s / w[cjp[0]];
        }
        let d = positions[0];
        let mii = w[d];
        let mut s = mii;
        for &q in &positions[1..] {
            s -= w[q] * w[q];
        }
        count += (positions.len() - 1) as u64;
        check_pivot(i, s, mii)?;
        w[d] = s.sqrt();
        for &r in rows {
            cpos[r] = NONE;
        }
    }
    ops::add(count);

    let upper_t = SparseLowerTriangular::from_parts(pattern.clone(), w);
    Ok(inverse_on_pattern(&upper_t))
}

/// Dense evaluation of the same update, used as a reference: forms
/// `M = L^{-T} L^{-1} + H^T R^{-1} H` in full, factors the order-reversed
/// matrix with a standard Cholesky and returns `U^{-T}` as a dense matrix.
pub fn filter_update_factor_dense(
    l_fc: &DMatrix<f64>,
    observed: &[usize],
    noise_precision: &[f64],
) -> Result<DMatrix<f64>> {
    let n = l_fc.nrows();
    let linv = l_fc
        .clone()
        .try_inverse()
        .ok_or(Error::ZeroDiagonal { row: 0 })?;
    let mut m = linv.transpose() * &linv;
    for (&i, &r) in observed.iter().zip(noise_precision) {
        m[(i, i)] += r;
    }
    let reversed = DMatrix::from_fn(n, n, |i, j| m[(n - 1 - i, n - 1 - j)]);
    let chol = reversed
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { row: 0, pivot: f64::NAN })?;
    let lr = chol.l();
    let upper = DMatrix::from_fn(n, n, |i, j| lr[(n - 1 - i, n - 1 - j)]);
    let uinv = upper.try_inverse().ok_or(Error::ZeroDiagonal { row: 0 })?;
    Ok(uinv.transpose())
}
