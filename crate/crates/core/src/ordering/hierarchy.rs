use super::{Point, SpatialGrid};
use crate::error::{Error, Result};

/// One knot set `K_{j_1,...,j_m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotNode {
    pub level: usize,
    /// 1-based child indices from the root (empty for the root).
    pub path: Vec<usize>,
    /// Original grid indices, in maxmin order.
    pub members: Vec<usize>,
    pub parent: Option<usize>,
    /// Terminal nodes hold everything left in a region below the deepest knot level.
    pub terminal: bool,
}

/// Knot sets stored in lexicographic order of their paths (a preorder walk).
#[derive(Debug, Clone, PartialEq)]
pub struct KnotHierarchy {
    nodes: Vec<KnotNode>,
    n: usize,
    branching: usize,
    knots_per_level: Vec<usize>,
    depth: usize,
}

impl KnotHierarchy {
    pub fn nodes(&self) -> &[KnotNode] {
        &self.nodes
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn knots_per_level(&self) -> &[usize] {
        &self.knots_per_level
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Largest terminal group (0 when no terminal nodes exist).
    pub fn max_terminal_size(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.terminal)
            .map(|n| n.members.len())
            .max()
            .unwrap_or(0)
    }
}

struct Builder<'a> {
    locations: &'a [Point],
    rank: Vec<usize>,
    branching: usize,
    splits_per_level: usize,
    knots: &'a [usize],
    depth: usize,
    nodes: Vec<KnotNode>,
}

impl Builder<'_> {
    fn node(&mut self, level: usize, path: Vec<usize>, mut region: Vec<usize>, parent: Option<usize>) {
        let take = self.knots[level].min(region.len());
        let rest = region.split_off(take);
        let id = self.nodes.len();
        self.nodes.push(KnotNode {
            level,
            path: path.clone(),
            members: region,
            parent,
            terminal: false,
        });
        if level == self.depth {
            if !rest.is_empty() {
                let mut p = path;
                p.push(1);
                self.nodes.push(KnotNode {
                    level: level + 1,
                    path: p,
                    members: rest,
                    parent: Some(id),
                    terminal: true,
                });
            }
            return;
        }
        let children = self.split(rest, level);
        for (j, child) in children.into_iter().enumerate() {
            let mut p = path.clone();
            p.push(j + 1);
            self.node(level + 1, p, child, Some(id));
        }
    }

    /// Splits a region into `branching` parts by repeated median bisection,
    /// alternating the axis with every bisection along the path.
    fn split(&self, region: Vec<usize>, level: usize) -> Vec<Vec<usize>> {
        let mut parts = vec![region];
        for s in 0..self.splits_per_level {
            let axis = (level * self.splits_per_level + s) % 2;
            parts = parts
                .into_iter()
                .flat_map(|mut part| {
                    part.sort_by(|&a, &b| {
                        self.locations[a][axis]
                            .total_cmp(&self.locations[b][axis])
                            .then(self.rank[a].cmp(&self.rank[b]))
                    });
                    let upper = part.split_off(part.len().div_ceil(2));
                    [part, upper]
                })
                .collect();
        }
        for part in &mut parts {
            part.sort_by_key(|&i| self.rank[i]);
        }
        parts
    }
}

/// Builds the knot hierarchy over a grid.
///
/// Level 0 takes the first `knots_per_level[0]` points in maxmin order. The rest
/// of every region is split into `branching` subregions whose first
/// `knots_per_level[m]` points form the level-`m` knots. Below level `depth`
/// everything left in a region becomes one terminal knot set.
pub fn build_hierarchy(
    grid: &SpatialGrid,
    branching: usize,
    knots_per_level: &[usize],
    depth: usize,
) -> Result<KnotHierarchy> {
    if branching < 2 || !branching.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "branching factor must be a power of two >= 2, got {branching}"
        )));
    }
    if knots_per_level.contains(&0) {
        return Err(Error::InvalidInput("knots per level must be positive".into()));
    }
    if knots_per_level.len() < depth + 1 {
        return Err(Error::InvalidInput(format!(
            "depth {depth} needs {} knot counts, got {}",
            depth + 1,
            knots_per_level.len()
        )));
    }
    let mut b = Builder {
        locations: grid.locations(),
        rank: grid.ranks(),
        branching,
        splits_per_level: branching.trailing_zeros() as usize,
        knots: knots_per_level,
        depth,
        nodes: vec![],
    };
    debug_assert_eq!(1 << b.splits_per_level, b.branching);
    b.node(0, vec![], grid.order().to_vec(), None);
    Ok(KnotHierarchy {
        nodes: b.nodes,
        n: grid.len(),
        branching,
        knots_per_level: knots_per_level[..=depth].to_vec(),
        depth,
    })
}

/// Smallest depth for which every terminal group holds at most `r` points,
/// with `r` knots at every level.
pub fn auto_depth(grid: &SpatialGrid, branching: usize, r: usize) -> Result<usize> {
    for depth in 0..=64 {
        let h = build_hierarchy(grid, branching, &vec![r; depth + 1], depth)?;
        if h.max_terminal_size() <= r {
            return Ok(depth);
        }
    }
    Err(Error::InvalidInput("no hierarchy depth reaches the terminal group size".into()))
}
