//! Balanced binary cluster tree and near-neighbor lists.
//!
//! Splitting only needs a distance accessor, so the tree can be built from
//! kernel entries alone through the Gram-induced metric
//! `d(i, j)^2 = K_ii + K_jj - 2 K_ij`.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{KernelMatrix, PointCloud};

/// Symmetric, nonnegative distance with zero diagonal.
pub trait Distance: Sync {
    fn dist(&self, i: usize, j: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64 + Sync> Distance for F {
    fn dist(&self, i: usize, j: usize) -> f64 {
        self(i, j)
    }
}

/// Distance induced by a positive semidefinite kernel.
pub struct KernelDistance<'a, K: ?Sized>(pub &'a K);

impl<K: KernelMatrix + ?Sized> Distance for KernelDistance<'_, K> {
    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let k = self.0;
        (k.entry(i, i) + k.entry(j, j) - 2.0 * k.entry(i, j))
            .max(0.0)
            .sqrt()
    }
}

/// Euclidean distance between raw coordinates.
pub struct EuclideanDistance<'a>(pub &'a PointCloud);

impl Distance for EuclideanDistance<'_> {
    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.0.dist(i, j)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub level: usize,
    /// Half-open range in tree order.
    pub lo: usize,
    pub hi: usize,
    pub children: Option<[usize; 2]>,
    pub parent: Option<usize>,
}

impl TreeNode {
    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    /// original index -> tree position
    perm: Vec<usize>,
    /// tree position -> original index
    order: Vec<usize>,
    /// Breadth-first; node 0 is the root.
    nodes: Vec<TreeNode>,
    leaf_size_max: usize,
    depth: usize,
    leaf_of: Vec<usize>,
}

/// Number of halvings needed so that every range fits in `leaf_size_max`.
pub fn tree_depth(n: usize, leaf_size_max: usize) -> usize {
    let mut depth = 0;
    while n.div_ceil(1 << depth) > leaf_size_max {
        depth += 1;
    }
    depth
}

impl ClusterTree {
    /// Rebuilds a tree from its tree-order permutation and node table.
    pub fn from_parts(
        order: Vec<usize>,
        nodes: Vec<TreeNode>,
        leaf_size_max: usize,
    ) -> Result<Self> {
        let n = order.len();
        let mut perm = vec![usize::MAX; n];
        for (pos, &orig) in order.iter().enumerate() {
            if orig >= n || perm[orig] != usize::MAX {
                return Err(Error::Malformed("tree order is not a permutation".into()));
            }
            perm[orig] = pos;
        }
        if nodes.is_empty() || nodes[0].lo != 0 || nodes[0].hi != n {
            return Err(Error::Malformed("root node must span all points".into()));
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.lo > node.hi || node.hi > n {
                return Err(Error::Malformed(format!("node {id} has an invalid range")));
            }
            if let Some([a, b]) = node.children {
                let ok = a > id
                    && b > id
                    && a < nodes.len()
                    && b < nodes.len()
                    && nodes[a].lo == node.lo
                    && nodes[a].hi == nodes[b].lo
                    && nodes[b].hi == node.hi
                    && nodes[a].parent == Some(id)
                    && nodes[b].parent == Some(id);
                if !ok {
                    return Err(Error::Malformed(format!(
                        "node {id} has inconsistent children"
                    )));
                }
            }
        }
        let mut leaf_of = vec![usize::MAX; n];
        let mut depth = 0;
        for (id, node) in nodes.iter().enumerate() {
            depth = depth.max(node.level);
            if node.is_leaf() {
                for slot in &mut leaf_of[node.lo..node.hi] {
                    *slot = id;
                }
            }
        }
        if leaf_of.contains(&usize::MAX) {
            return Err(Error::Malformed("leaves do not cover all points".into()));
        }
        Ok(ClusterTree {
            perm,
            order,
            nodes,
            leaf_size_max,
            depth,
            leaf_of,
        })
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// original index -> tree position
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// tree position -> original index
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn leaf_size_max(&self) -> usize {
        self.leaf_size_max
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&id| self.nodes[id].is_leaf())
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&id| !self.nodes[id].is_leaf())
    }

    /// Node ids grouped by level, each group sorted by range start.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut levels = vec![Vec::new(); self.depth + 1];
        for (id, node) in self.nodes.iter().enumerate() {
            levels[node.level].push(id);
        }
        for lvl in &mut levels {
            lvl.sort_by_key(|&id| self.nodes[id].lo);
        }
        levels
    }

    /// Leaf containing tree position `pos`.
    pub fn leaf_of_position(&self, pos: usize) -> usize {
        self.leaf_of[pos]
    }

    /// Deepest node whose range contains both positions.
    pub fn common_ancestor(&self, a: usize, b: usize) -> usize {
        let mut id = 0;
        while let Some([l, r]) = self.nodes[id].children {
            let in_l = |p: usize| p < self.nodes[l].hi;
            match (in_l(a), in_l(b)) {
                (true, true) => id = l,
                (false, false) => id = r,
                _ => return id,
            }
        }
        id
    }

    pub fn sibling(&self, id: usize) -> Option<usize> {
        let parent = self.nodes[id].parent?;
        let [a, b] = self.nodes[parent].children?;
        Some(if a == id { b } else { a })
    }
}

fn cmp_key(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn farthest<D: Distance + ?Sized>(dist: &D, from: usize, idx: &[usize]) -> usize {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for &j in idx {
        let d = dist.dist(from, j);
        // larger distance wins, ties go to the smaller original index
        if d > best.0 || (d == best.0 && j < best.1) {
            best = (d, j);
        }
    }
    best.1
}

/// Reorders `idx` so that its first `ceil(len/2)` entries form the side of pole `a`.
fn split_range<D: Distance + ?Sized>(dist: &D, idx: &mut [usize], rng: &mut ChaCha8Rng) {
    let p = idx[rng.gen_range(0..idx.len())];
    let a = farthest(dist, p, idx);
    let b = farthest(dist, a, idx);
    let mut keyed: Vec<(f64, usize)> = idx
        .iter()
        .map(|&j| (dist.dist(a, j) - dist.dist(b, j), j))
        .collect();
    keyed.sort_unstable_by(|x, y| cmp_key(*x, *y));
    for (slot, (_, j)) in idx.iter_mut().zip(keyed) {
        *slot = j;
    }
}

fn node_rng(seed: u64, node: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (node as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Builds a balanced binary tree by recursive farthest-point bisection.
///
/// Every node above `tree_depth(n, leaf_size_max)` is split into halves whose
/// sizes differ by at most one. Within a node: pick a seeded random point `p`,
/// the point `a` farthest from `p`, the point `b` farthest from `a`, order all
/// points by `d(a, .) - d(b, .)` and cut at the middle.
pub fn build_tree<D: Distance + ?Sized>(
    dist: &D,
    n: usize,
    leaf_size_max: usize,
    seed: u64,
) -> Result<ClusterTree> {
    if n == 0 {
        return Err(Error::invalid("cannot build a tree over zero points"));
    }
    if leaf_size_max == 0 {
        return Err(Error::invalid("leaf_size_max must be >= 1"));
    }
    let depth = tree_depth(n, leaf_size_max);
    let mut order: Vec<usize> = (0..n).collect();
    let mut nodes = vec![TreeNode {
        level: 0,
        lo: 0,
        hi: n,
        children: None,
        parent: None,
    }];
    let mut frontier = vec![0usize];
    for level in 0..depth {
        let splitting: Vec<usize> = frontier
            .iter()
            .copied()
            .filter(|&id| nodes[id].len() >= 2)
            .collect();
        // disjoint mutable views on the order array, one per splitting node
        let mut views = Vec::with_capacity(splitting.len());
        let mut rest: &mut [usize] = &mut order;
        let mut offset = 0;
        for &id in &splitting {
            let (lo, hi) = (nodes[id].lo, nodes[id].hi);
            let (_, tail) = rest.split_at_mut(lo - offset);
            let (mine, tail) = tail.split_at_mut(hi - lo);
            views.push((id, mine));
            rest = tail;
            offset = hi;
        }
        views
            .par_iter_mut()
            .for_each(|(id, idx)| split_range(dist, idx, &mut node_rng(seed, *id)));

        let mut next = Vec::with_capacity(2 * splitting.len());
        for id in splitting {
            let (lo, hi) = (nodes[id].lo, nodes[id].hi);
            let mid = lo + (hi - lo).div_ceil(2);
            let left = nodes.len();
            for (a, b) in [(lo, mid), (mid, hi)] {
                nodes.push(TreeNode {
                    level: level + 1,
                    lo: a,
                    hi: b,
                    children: None,
                    parent: Some(id),
                });
            }
            nodes[id].children = Some([left, left + 1]);
            next.extend([left, left + 1]);
        }
        frontier = next;
    }
    ClusterTree::from_parts(order, nodes, leaf_size_max)
}

/// How candidate neighbors are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborSearch {
    /// All `n - 1` candidates per point.
    Exact,
    /// Points of the enclosing leaf and its sibling, pooled over a few
    /// differently seeded trees and refined through neighbors of neighbors.
    Approximate,
    /// Exact up to the given size, approximate above it.
    Auto { dense_limit: usize },
}

/// Per-point lists of the `kappa` nearest other points (original indices),
/// sorted by distance with ties broken by index.
pub fn neighbor_lists<D: Distance + ?Sized>(
    dist: &D,
    tree: &ClusterTree,
    kappa: usize,
    search: NeighborSearch,
) -> Result<Vec<Vec<usize>>> {
    let n = tree.n();
    if kappa >= n {
        return Err(Error::invalid(format!(
            "kappa must be < n, got kappa={kappa} n={n}"
        )));
    }
    let exact = match search {
        NeighborSearch::Exact => true,
        NeighborSearch::Approximate => false,
        NeighborSearch::Auto { dense_limit } => n <= dense_limit,
    };
    if kappa == 0 {
        return Ok(vec![Vec::new(); n]);
    }
    if exact {
        Ok((0..n)
            .into_par_iter()
            .map(|i| nearest_among(dist, i, 0..n, kappa))
            .collect())
    } else {
        approximate_neighbors(dist, tree, kappa)
    }
}

fn nearest_among<D, I>(dist: &D, i: usize, candidates: I, kappa: usize) -> Vec<usize>
where
    D: Distance + ?Sized,
    I: IntoIterator<Item = usize>,
{
    let mut keyed: Vec<(f64, usize)> = candidates
        .into_iter()
        .filter(|&j| j != i)
        .map(|j| (dist.dist(i, j), j))
        .collect();
    let take = kappa.min(keyed.len());
    if take == 0 {
        return Vec::new();
    }
    keyed.select_nth_unstable_by(take - 1, |a, b| cmp_key(*a, *b));
    keyed.truncate(take);
    keyed.sort_unstable_by(|a, b| cmp_key(*a, *b));
    keyed.into_iter().map(|(_, j)| j).collect()
}

const REFINE_PASSES: usize = 1;
const EXTRA_TREES: u64 = 2;

// node covering the leaf of `pos` that holds at least 2 * kappa + 1 points and is not a leaf
fn candidate_range(tree: &ClusterTree, pos: usize, kappa: usize) -> &[usize] {
    let mut id = tree.leaf_of_position(pos);
    while tree.node(id).len() < 2 * kappa + 1 || tree.node(id).is_leaf() {
        match tree.node(id).parent {
            Some(p) => id = p,
            None => break,
        }
    }
    let node = tree.node(id);
    &tree.order()[node.lo..node.hi]
}

fn approximate_neighbors<D: Distance + ?Sized>(
    dist: &D,
    tree: &ClusterTree,
    kappa: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = tree.n();
    // differently seeded trees put their cuts elsewhere
    let mut forest = Vec::with_capacity(EXTRA_TREES as usize);
    for t in 0..EXTRA_TREES {
        forest.push(build_tree(dist, n, tree.leaf_size_max(), 0x5eed_0000 + t)?);
    }
    let mut lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<usize> = candidate_range(tree, tree.perm()[i], kappa).to_vec();
            for t in &forest {
                cand.extend_from_slice(candidate_range(t, t.perm()[i], kappa));
            }
            cand.sort_unstable();
            cand.dedup();
            nearest_among(dist, i, cand, kappa)
        })
        .collect();
    for _ in 0..REFINE_PASSES {
        lists = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut cand: Vec<usize> = lists[i].clone();
                for &j in &lists[i] {
                    cand.extend_from_slice(&lists[j]);
                }
                cand.sort_unstable();
                cand.dedup();
                nearest_among(dist, i, cand, kappa)
            })
            .collect();
    }
    Ok(lists)
}
