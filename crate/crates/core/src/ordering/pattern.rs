use std::fmt::Write as _;
use std::sync::Arc;

use super::hierarchy::KnotHierarchy;
use super::invert_permutation;
use crate::error::{Error, Result};

/// Lower-triangular sparsity structure with a full diagonal.
///
/// Stored row-wise (ascending columns, diagonal last) with a column-wise
/// index on the side so that kernels can walk either direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_pos: Vec<usize>,
    max_row: usize,
}

impl SparsityPattern {
    /// Builds a pattern from explicit rows. Each row must be strictly ascending,
    /// contain only columns `<= i`, and include the diagonal.
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("pattern dimension must be positive".into()));
        }
        if rows.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "pattern of dimension {n} given {} rows",
                rows.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            if row.last() != Some(&i) {
                return Err(Error::InvalidInput(format!("row {i} must end with its diagonal")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput(format!("row {i} columns are not strictly ascending")));
            }
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        Ok(Self::from_csr(n, row_ptr, cols))
    }

    fn from_csr(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>) -> Self {
        let mut counts = vec![0usize; n];
        for &c in &cols {
            counts[c] += 1;
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        for c in &counts {
            col_ptr.push(col_ptr.last().unwrap() + c);
        }
        let mut fill = col_ptr[..n].to_vec();
        let mut col_rows = vec![0; cols.len()];
        let mut col_pos = vec![0; cols.len()];
        for i in 0..n {
            for p in row_ptr[i]..row_ptr[i + 1] {
                let c = cols[p];
                col_rows[fill[c]] = i;
                col_pos[fill[c]] = p;
                fill[c] += 1;
            }
        }
        let max_row = (0..n).map(|i| row_ptr[i + 1] - row_ptr[i]).max().unwrap_or(0);
        Self {
            n,
            row_ptr,
            cols,
            col_ptr,
            col_rows,
            col_pos,
            max_row,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Maximum number of nonzeros in any row (the `N` of the cost bounds).
    pub fn max_row_nnz(&self) -> usize {
        self.max_row
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn is_dense(&self) -> bool {
        self.nnz() == self.n * (self.n + 1) / 2
    }

    /// Column indices of row `i`, ascending, diagonal last.
    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage range of row `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Row indices present in column `j`, ascending, diagonal first.
    #[inline]
    pub fn col(&self, j: usize) -> &[usize] {
        &self.col_rows[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    /// Storage positions (row-major) of the entries of column `j`, aligned with [`Self::col`].
    #[inline]
    pub fn col_positions(&self, j: usize) -> &[usize] {
        &self.col_pos[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    #[inline]
    pub fn diag_position(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - 1
    }

    #[inline]
    pub fn column_index(&self, p: usize) -> usize {
        self.cols[p]
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j > i {
            return None;
        }
        let r = self.row_range(i);
        self.cols[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.position(i, j).is_some()
    }

    /// Text form: header `n N`, then one line per row with ascending column indices.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.n, self.max_row).unwrap();
        for i in 0..self.n {
            write_joined(&mut s, self.row(i).iter());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (n, declared_max) = parse_header(lines.next())?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = lines.next().ok_or_else(|| Error::Parse {
                line: None,
                msg: format!("expected {n} pattern rows"),
            })?;
            rows.push(parse_usizes(ln + 1, line)?);
        }
        let pattern = Self::from_rows(n, rows)?;
        if pattern.max_row != declared_max {
            return Err(Error::Parse {
                line: Some(1),
                msg: format!(
                    "header declares N = {declared_max} but rows have maximum {}",
                    pattern.max_row
                ),
            });
        }
        Ok(pattern)
    }
}

pub(crate) fn write_joined<T: std::fmt::Display>(s: &mut String, items: impl Iterator<Item = T>) {
    let mut first = true;
    for x in items {
        if !first {
            s.push(' ');
        }
        first = false;
        write!(s, "{x}").unwrap();
    }
    s.push('\n');
}

pub(crate) fn parse_header(line: Option<(usize, &str)>) -> Result<(usize, usize)> {
    let (_, line) = line.ok_or_else(|| Error::Parse {
        line: Some(1),
        msg: "missing header".into(),
    })?;
    let v = parse_usizes(1, line)?;
    match v.as_slice() {
        [n, m] => Ok((*n, *m)),
        _ => Err(Error::Parse {
            line: Some(1),
            msg: "header must be `n N`".into(),
        }),
    }
}

pub(crate) fn parse_usizes(line: usize, s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line: Some(line),
                msg: format!("`{t}` is not a non-negative integer"),
            })
        })
        .collect()
}

/// A pattern together with the permutation that puts variables in pattern order.
#[derive(Debug, Clone)]
pub struct PatternOrdering {
    pub pattern: Arc<SparsityPattern>,
    /// `order[k]` is the original index of the variable at pattern position `k`.
    pub order: Vec<usize>,
    /// `inverse[i]` is the pattern position of original index `i`.
    pub inverse: Vec<usize>,
}

impl PatternOrdering {
    pub fn new(pattern: SparsityPattern, order: Vec<usize>) -> Result<Self> {
        if order.len() != pattern.n() {
            return Err(Error::DimensionMismatch("ordering length differs from pattern size".into()));
        }
        let mut seen = vec![false; order.len()];
        for &o in &order {
            if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::InvalidInput("ordering is not a permutation".into()));
            }
        }
        let inverse = invert_permutation(&order);
        Ok(Self {
            pattern: Arc::new(pattern),
            order,
            inverse,
        })
    }
}

/// Hierarchical Vecchia pattern: variable `i` conditions on every member of the
/// ancestor nodes of its own node, plus the members of its node that precede it.
///
/// Variables are renumbered in hierarchy order (nodes lexicographically, members
/// within a node in maxmin order); the returned ordering maps back to grid indices.
pub fn build_hv_pattern(h: &KnotHierarchy) -> Result<PatternOrdering> {
    let nodes = h.nodes();
    let mut start = Vec::with_capacity(nodes.len());
    let mut order = Vec::with_capacity(h.n());
    for node in nodes {
        start.push(order.len());
        order.extend_from_slice(&node.members);
    }
    if order.len() != h.n() {
        return Err(Error::InvalidInput("hierarchy does not cover every variable".into()));
    }

    let mut rows = Vec::with_capacity(h.n());
    for (v, node) in nodes.iter().enumerate() {
        let mut chain = vec![];
        let mut a = node.parent;
        while let Some(p) = a {
            chain.push(p);
            a = nodes[p].parent;
        }
        chain.reverse();
        let mut base: Vec<usize> = Vec::new();
        for &p in &chain {
            base.extend(start[p]..start[p] + nodes[p].members.len());
        }
        for k in 0..node.members.len() {
            let mut row = base.clone();
            row.extend(start[v]..=start[v] + k);
            rows.push(row);
        }
    }
    PatternOrdering::new(SparsityPattern::from_rows(h.n(), rows)?, order)
}

/// Low-rank pattern: the diagonal plus the first `leading` columns.
pub fn build_lowrank_pattern(n: usize, leading: usize) -> Result<SparsityPattern> {
    if leading == 0 || leading > n {
        return Err(Error::InvalidInput(format!(
            "low-rank column count {leading} outside 1..={n}"
        )));
    }
    let rows = (0..n)
        .map(|i| {
            let mut r: Vec<usize> = (0..leading.min(i)).collect();
            r.push(i);
            r
        })
        .collect();
    SparsityPattern::from_rows(n, rows)
}

pub fn build_dense_pattern(n: usize) -> Result<SparsityPattern> {
    SparsityPattern::from_rows(n, (0..n).map(|i| (0..=i).collect()).collect())
}
