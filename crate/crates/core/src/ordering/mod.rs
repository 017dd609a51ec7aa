//! Maxmin ordering of grid locations and the hierarchical knot construction
//! that determines the sparsity pattern of every Cholesky factor downstream.

mod hierarchy;
mod pattern;

pub(crate) mod pattern_io {
    pub(crate) use super::pattern::parse_header;
}

pub use hierarchy::{auto_depth, build_hierarchy, KnotHierarchy, KnotNode};
pub use pattern::{
    build_dense_pattern, build_hv_pattern, build_lowrank_pattern, PatternOrdering,
    SparsityPattern,
};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Grid locations together with their maxmin permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    locations: Vec<Point>,
    order: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(locations: Vec<Point>) -> Result<Self> {
        let order = maxmin_order(&locations)?;
        Ok(Self { locations, order })
    }

    /// Regular `rows x cols` grid over the unit square with spacing `1/(cols-1)`,
    /// enumerated row-major (`index = row * cols + col`).
    pub fn regular(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("grid must have at least one row and column".into()));
        }
        let h = grid_spacing(cols);
        let locations = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| [c as f64 * h, r as f64 * h]))
            .collect();
        Self::new(locations)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    /// Maxmin order: `order()[k]` is the original index of the k-th selected point.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Maxmin rank of each original index.
    pub fn ranks(&self) -> Vec<usize> {
        invert_permutation(&self.order)
    }
}

pub fn grid_spacing(cols: usize) -> f64 {
    if cols > 1 {
        1.0 / (cols - 1) as f64
    } else {
        1.0
    }
}

fn sq_dist(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Maxmin ordering: starts at the point nearest the centroid, then repeatedly
/// picks the point maximizing the minimum distance to those already chosen.
/// Ties go to the lowest original index.
pub fn maxmin_order(locations: &[Point]) -> Result<Vec<usize>> {
    let n = locations.len();
    if n == 0 {
        return Err(Error::InvalidInput("maxmin ordering needs at least one location".into()));
    }
    if let Some(bad) = locations.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidInput(format!("location {bad} is not finite")));
    }
    check_distinct(locations)?;

    let inv_n = 1.0 / n as f64;
    let centroid = locations
        .iter()
        .fold([0.0, 0.0], |acc, p| [acc[0] + p[0] * inv_n, acc[1] + p[1] * inv_n]);

    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, p) in locations.iter().enumerate() {
        let d = sq_dist(p, &centroid);
        if d < best {
            best = d;
            first = i;
        }
    }

    let mut order = Vec::with_capacity(n);
    let mut selected = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = first;
    for _ in 0..n {
        order.push(next);
        selected[next] = true;
        let p = locations[next];
        let mut arg = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = sq_dist(&locations[i], &p);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > far {
                far = min_dist[i];
                arg = i;
            }
        }
        next = arg;
    }
    Ok(order)
}

fn check_distinct(locations: &[Point]) -> Result<()> {
    let mut idx: Vec<usize> = (0..locations.len()).collect();
    idx.sort_by(|&a, &b| {
        locations[a][0]
            .total_cmp(&locations[b][0])
            .then(locations[a][1].total_cmp(&locations[b][1]))
            .then(a.cmp(&b))
    });
    for w in idx.windows(2) {
        if locations[w[0]] == locations[w[1]] {
            return Err(Error::DuplicateLocation {
                first: w[0].min(w[1]),
                second: w[0].max(w[1]),
            });
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_maxmin(locs: &[Point]) -> Vec<usize> {
        // Direct transcription of the definition, recomputing every minimum from scratch.
        let n = locs.len();
        let cx = locs.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy = locs.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        let mut order = vec![];
        let mut best = (f64::INFINITY, 0);
        for (i, p) in locs.iter().enumerate() {
            let d = sq_dist(p, &[cx, cy]);
            if d < best.0 {
                best = (d, i);
            }
        }
        order.push(best.1);
        while order.len() < n {
            let mut pick = (f64::NEG_INFINITY, 0);
            for i in 0..n {
                if order.contains(&i) {
                    continue;
                }
                let m = order
                    .iter()
                    .map(|&j| sq_dist(&locs[i], &locs[j]))
                    .fold(f64::INFINITY, f64::min);
                if m > pick.0 {
                    pick = (m, i);
                }
            }
            order.push(pick.1);
        }
        order
    }

    #[test]
    fn single_point() {
        assert_eq!(maxmin_order(&[[0.5, 0.5]]).unwrap(), vec![0]);
    }

    #[test]
    fn three_points_on_a_line() {
        let locs = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]];
        assert_eq!(maxmin_order(&locs).unwrap(), vec![1, 0, 2]);
        assert_eq!(brute_force_maxmin(&locs), vec![1, 0, 2]);
    }

    #[test]
    fn unit_square_corners() {
        let locs = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert_eq!(maxmin_order(&locs).unwrap(), vec![0, 3, 1, 2]);
        assert_eq!(brute_force_maxmin(&locs), vec![0, 3, 1, 2]);
    }

    #[test]
    fn duplicates_rejected() {
        let err = maxmin_order(&[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::DuplicateLocation { first: 0, second: 2 }));
    }

    #[test]
    fn matches_brute_force_on_regular_grid() {
        let g = SpatialGrid::regular(7, 9).unwrap();
        assert_eq!(g.order(), brute_force_maxmin(g.locations()).as_slice());
    }

    #[test]
    fn regular_grid_layout() {
        let g = SpatialGrid::regular(2, 3).unwrap();
        assert_eq!(g.locations()[4], [0.5, 0.5]);
        assert_eq!(g.len(), 6);
    }
}
