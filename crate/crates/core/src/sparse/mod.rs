//! Pattern-constrained sparse linear algebra.
//!
//! Everything here works on lower-triangular factors whose support is fixed by
//! a [`SparsityPattern`]. Costs are `O(n N^2)` for a pattern with at most `N`
//! nonzeros per row, provided the pattern is closed under elimination (the
//! hierarchical, low-rank and dense patterns all are).

mod csr;
mod factor;
mod gram;
mod hcf;

pub use csr::CsrMatrix;
pub use factor::SparseLowerTriangular;
pub use gram::{selected_gram, selected_gram_values, SelectedEntries};
pub use hcf::{
    filter_update_factor, filter_update_factor_dense, hcf, hcf_values, hcf_with_jitter,
    inverse_on_pattern, PIVOT_TOLERANCE,
};

use nalgebra::DMatrix;

pub use crate::ordering::SparsityPattern;

/// Read access to a symmetric matrix, one entry at a time.
///
/// Factorizations only ever ask for entries on their pattern, so kernel
/// covariances can be evaluated lazily instead of being materialized.
pub trait SymmetricEntries {
    fn dim(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> f64;

    /// Entries at every pattern position, in storage order.
    fn gather(&self, pattern: &SparsityPattern) -> Vec<f64> {
        let mut out = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.n() {
            out.extend(pattern.row(i).iter().map(|&j| self.entry(i, j)));
        }
        out
    }
}

impl SymmetricEntries for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }
}

impl<T: SymmetricEntries + ?Sized> SymmetricEntries for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        (**self).entry(i, j)
    }

    fn gather(&self, pattern: &SparsityPattern) -> Vec<f64> {
        (**self).gather(pattern)
    }
}

pub(crate) const NONE: usize = usize::MAX;
