//! Hierarchical compression `K ≈ D + S + UV` of symmetric kernel matrices.
//!
//! The cluster tree splits every internal node into two children `A` and
//! `B`. The block `K[A, B]` is stored as a cross approximation `U Vᵀ`,
//! `K[B, A]` is its transpose, and leaves keep their diagonal blocks dense.
//! Each off-diagonal entry therefore belongs to exactly one low-rank block,
//! the one at the deepest common ancestor of its row and column. Near
//! neighbors that fall in different leaves get a sparse correction in `S`
//! that makes their entries exact.
//!
//! All blocks are indexed by tree position, not by original index.

mod aca;
mod apply;
mod io;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use io::{load_hmatrix, read_hmatrix, save_hmatrix, write_hmatrix, HMATRIX_MAGIC};

use crate::error::{Error, Result};
use crate::htree::{build_tree, neighbor_lists, ClusterTree, KernelDistance, NeighborSearch};
use crate::linalg;
use crate::pointcloud::{KernelMatrix, DEFAULT_DENSE_LIMIT};

/// Sampled entry pairs used for the error estimate in [`CompressionReport`].
pub const REPORT_ERROR_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HParams {
    pub leaf_size_max: usize,
    pub rank_max: usize,
    /// Relative tolerance of each cross approximation, in (0, 1).
    pub tol: f64,
    /// Neighbors per point whose entries are made exact.
    pub kappa: usize,
    /// Neighbor search is exact up to this many points.
    pub dense_limit: usize,
}

impl Default for HParams {
    fn default() -> Self {
        HParams {
            leaf_size_max: 768,
            rank_max: 768,
            tol: 1e-3,
            kappa: 64,
            dense_limit: DEFAULT_DENSE_LIMIT,
        }
    }
}

impl HParams {
    pub fn validate(&self) -> Result<()> {
        if self.leaf_size_max == 0 {
            return Err(Error::invalid("leaf size must be >= 1"));
        }
        if self.rank_max == 0 {
            return Err(Error::invalid("rank must be >= 1"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!(
                "tolerance must lie in (0, 1), got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// `rows × cols` block `U Vᵀ` with `U` (rows × rank) and `Vᵀ` stored as
/// `V` (cols × rank), both column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankBlock {
    rows: usize,
    cols: usize,
    rank: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl LowRankBlock {
    pub(crate) fn new(rows: usize, cols: usize, rank: usize, u: Vec<f64>, v: Vec<f64>) -> Self {
        debug_assert_eq!(u.len(), rows * rank);
        debug_assert_eq!(v.len(), cols * rank);
        LowRankBlock {
            rows,
            cols,
            rank,
            u,
            v,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut s = 0.0;
        for l in 0..self.rank {
            s += self.u[l * self.rows + i] * self.v[l * self.cols + j];
        }
        s
    }

    pub fn stored_scalars(&self) -> usize {
        self.u.len() + self.v.len()
    }
}

/// Symmetric sparse matrix in CSR form with both triangles stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSym {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Builds from `(row, col, value)` triples with `row < col`; each is
    /// mirrored. Duplicates are not allowed.
    pub(crate) fn from_upper(n: usize, mut upper: Vec<(usize, usize, f64)>) -> Self {
        let mut all = Vec::with_capacity(2 * upper.len());
        for &(i, j, v) in &upper {
            all.push((i, j, v));
            all.push((j, i, v));
        }
        upper.clear();
        all.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &all {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSym {
            row_ptr,
            cols: all.iter().map(|t| t.1).collect(),
            vals: all.iter().map(|t| t.2).collect(),
        }
    }

    pub(crate) fn from_parts(row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Self {
        SparseSym {
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.row_ptr.is_empty() {
            return 0.0;
        }
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }
}

/// Compressed symmetric kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    tree: ClusterTree,
    params: HParams,
    /// Node id to index into `diag`, `usize::MAX` for internal nodes.
    leaf_slot: Vec<usize>,
    /// Dense symmetric leaf blocks, column-major.
    diag: Vec<Vec<f64>>,
    /// Factors of `K[A, B]` for internal nodes with children `A`, `B`.
    low_rank: Vec<Option<LowRankBlock>>,
    near: SparseSym,
    /// Kernel bandwidth, kept as metadata only.
    sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressionReport {
    pub est_rel_error: f64,
    pub compress_seconds: f64,
    pub stored_scalars: usize,
    /// Ranks of the low-rank blocks, grouped by tree level (root first).
    pub achieved_ranks: Vec<Vec<usize>>,
}

impl CompressionReport {
    /// `(rank, count)` pairs for one level, sorted by rank.
    pub fn rank_histogram(&self, level: usize) -> Vec<(usize, usize)> {
        let mut hist: Vec<(usize, usize)> = Vec::new();
        let mut ranks = self.achieved_ranks.get(level).cloned().unwrap_or_default();
        ranks.sort_unstable();
        for r in ranks {
            match hist.last_mut() {
                Some((v, c)) if *v == r => *c += 1,
                _ => hist.push((r, 1)),
            }
        }
        hist
    }

    pub fn max_rank(&self) -> usize {
        self.achieved_ranks
            .iter()
            .flatten()
            .copied()
            .max()
            .unwrap_or(0)
    }
}

/// Compresses `kernel` with a tree built from the kernel-induced distance.
pub fn compress<K: KernelMatrix + ?Sized>(
    kernel: &K,
    params: &HParams,
    seed: u64,
) -> Result<(HMatrix, CompressionReport)> {
    params.validate()?;
    let start = Instant::now();
    let n = kernel.size();
    if n == 0 {
        return Err(Error::invalid("cannot compress an empty matrix"));
    }
    let tree = build_tree(&KernelDistance(kernel), n, params.leaf_size_max, seed)?;
    compress_timed(kernel, tree, params, seed, start)
}

/// Compresses `kernel` over a prebuilt tree.
pub fn compress_with_tree<K: KernelMatrix + ?Sized>(
    kernel: &K,
    tree: ClusterTree,
    params: &HParams,
    seed: u64,
) -> Result<(HMatrix, CompressionReport)> {
    params.validate()?;
    if tree.n() != kernel.size() {
        return Err(Error::invalid(format!(
            "tree covers {} points, kernel has {}",
            tree.n(),
            kernel.size()
        )));
    }
    compress_timed(kernel, tree, params, seed, Instant::now())
}

fn compress_timed<K: KernelMatrix + ?Sized>(
    kernel: &K,
    tree: ClusterTree,
    params: &HParams,
    seed: u64,
    start: Instant,
) -> Result<(HMatrix, CompressionReport)> {
    let n = tree.n();
    let order = tree.order().to_vec();
    let entry = |a: usize, b: usize| kernel.entry(order[a], order[b]);

    let leaves: Vec<usize> = tree.leaves().collect();
    let mut leaf_slot = vec![usize::MAX; tree.nodes().len()];
    for (slot, &id) in leaves.iter().enumerate() {
        leaf_slot[id] = slot;
    }
    let diag: Vec<Vec<f64>> = leaves
        .par_iter()
        .map(|&id| {
            let node = tree.node(id);
            let m = node.len();
            let mut block = vec![0.0; m * m];
            for j in 0..m {
                for i in j..m {
                    let v = entry(node.lo + i, node.lo + j);
                    block[j * m + i] = v;
                    block[i * m + j] = v;
                }
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite kernel entry".into()));
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;

    let mut low_rank: Vec<Option<LowRankBlock>> = vec![None; tree.nodes().len()];
    // bottom-up, one barrier per level
    for level in tree.levels().into_iter().rev() {
        let blocks: Vec<(usize, LowRankBlock)> = level
            .par_iter()
            .filter_map(|&id| tree.node(id).children.map(|c| (id, c)))
            .map(|(id, [a, b])| {
                let (na, nb) = (tree.node(a), tree.node(b));
                let blk = aca::aca(
                    na.len(),
                    nb.len(),
                    |i, j| entry(na.lo + i, nb.lo + j),
                    params.tol,
                    params.rank_max,
                    node_seed(seed, id),
                )?;
                Ok((id, blk))
            })
            .collect::<Result<_>>()?;
        for (id, blk) in blocks {
            low_rank[id] = Some(blk);
        }
    }

    let mut h = HMatrix {
        tree,
        params: *params,
        leaf_slot,
        diag,
        low_rank,
        near: SparseSym::default(),
        sigma: None,
    };
    h.near = near_field(kernel, &h, params)?;
    let compress_seconds = start.elapsed().as_secs_f64();
    let est_rel_error = estimate_rel_error(&h, kernel, REPORT_ERROR_SAMPLES, seed)?;
    let report = CompressionReport {
        est_rel_error,
        compress_seconds,
        stored_scalars: h.stored_scalars(),
        achieved_ranks: h.ranks_by_level(),
    };
    debug_assert_eq!(n, h.n());
    Ok((h, report))
}

fn node_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Corrections `K_ij - (UV)_ij` on neighbor pairs in different leaves.
fn near_field<K: KernelMatrix + ?Sized>(
    kernel: &K,
    h: &HMatrix,
    params: &HParams,
) -> Result<SparseSym> {
    let tree = &h.tree;
    let n = tree.n();
    if params.kappa == 0 || h.diag.len() < 2 {
        return Ok(SparseSym::from_upper(n, Vec::new()));
    }
    let lists = neighbor_lists(
        &KernelDistance(kernel),
        tree,
        params.kappa,
        NeighborSearch::Auto {
            dense_limit: params.dense_limit,
        },
    )?;
    let perm = tree.perm();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, list) in lists.iter().enumerate() {
        for &j in list {
            let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
            if tree.leaf_of_position(a) != tree.leaf_of_position(b) {
                pairs.push((a, b));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let order = tree.order();
    let upper: Vec<(usize, usize, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let k = kernel.entry(order[a], order[b]);
            if !k.is_finite() {
                return Err(Error::Data("non-finite kernel entry".into()));
            }
            Ok((a, b, k - h.low_rank_entry(a, b)))
        })
        .collect::<Result<Vec<_>>>()?;
    // zero corrections carry no information
    let upper = upper.into_iter().filter(|t| t.2 != 0.0).collect();
    Ok(SparseSym::from_upper(n, upper))
}

impl HMatrix {
    pub fn n(&self) -> usize {
        self.tree.n()
    }

    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn params(&self) -> &HParams {
        &self.params
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: Option<f64>) {
        self.sigma = sigma;
    }

    /// Dense diagonal block of a leaf node.
    pub fn diag_block(&self, leaf: usize) -> Option<&[f64]> {
        self.leaf_slot
            .get(leaf)
            .and_then(|&s| self.diag.get(s))
            .map(Vec::as_slice)
    }

    /// Factors of `K[A, B]` for an internal node with children `A`, `B`.
    pub fn low_rank(&self, node: usize) -> Option<&LowRankBlock> {
        self.low_rank.get(node).and_then(Option::as_ref)
    }

    pub fn near_field(&self) -> &SparseSym {
        &self.near
    }

    /// Leaf blocks, low-rank factors and sparse corrections.
    pub fn stored_scalars(&self) -> usize {
        self.diag.iter().map(Vec::len).sum::<usize>()
            + self
                .low_rank
                .iter()
                .flatten()
                .map(LowRankBlock::stored_scalars)
                .sum::<usize>()
            + self.near.nnz()
    }

    pub fn ranks_by_level(&self) -> Vec<Vec<usize>> {
        self.tree
            .levels()
            .iter()
            .map(|lvl| {
                lvl.iter()
                    .filter_map(|&id| self.low_rank(id))
                    .map(|b| b.rank())
                    .collect()
            })
            .filter(|r: &Vec<usize>| !r.is_empty())
            .collect()
    }

    /// Low-rank part at tree positions `a`, `b` (zero inside a leaf).
    fn low_rank_entry(&self, a: usize, b: usize) -> f64 {
        let tree = &self.tree;
        if tree.leaf_of_position(a) == tree.leaf_of_position(b) {
            return 0.0;
        }
        let c = tree.common_ancestor(a, b);
        let [left, right] = tree.node(c).children.expect("common ancestor is internal");
        let blk = self.low_rank[c]
            .as_ref()
            .expect("internal node has a block");
        let (lo_a, lo_b) = (tree.node(left).lo, tree.node(right).lo);
        if a < b {
            blk.entry(a - lo_a, b - lo_b)
        } else {
            blk.entry(b - lo_a, a - lo_b)
        }
    }

    /// Entry at tree positions `a`, `b`.
    fn entry_at(&self, a: usize, b: usize) -> f64 {
        let tree = &self.tree;
        let leaf = tree.leaf_of_position(a);
        if leaf == tree.leaf_of_position(b) {
            let node = tree.node(leaf);
            let m = node.len();
            return self.diag[self.leaf_slot[leaf]][(b - node.lo) * m + (a - node.lo)];
        }
        self.low_rank_entry(a, b) + self.near.get(a, b)
    }

    /// `K̃_ij` in original indexing.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let perm = self.tree.perm();
        self.entry_at(perm[i], perm[j])
    }

    /// Materializes `K̃` in original indexing, column-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let tree = &self.tree;
        // permuted copy first
        let mut p = vec![0.0; n * n];
        for leaf in tree.leaves() {
            let node = tree.node(leaf);
            let m = node.len();
            let block = &self.diag[self.leaf_slot[leaf]];
            for j in 0..m {
                p[(node.lo + j) * n + node.lo..(node.lo + j) * n + node.hi]
                    .copy_from_slice(&block[j * m..(j + 1) * m]);
            }
        }
        for (id, blk) in self.low_rank.iter().enumerate() {
            let Some(blk) = blk else { continue };
            let [a, b] = tree.node(id).children.expect("internal node");
            let (na, nb) = (tree.node(a), tree.node(b));
            let (r, c) = (blk.rows(), blk.cols());
            let mut full = vec![0.0; r * c];
            let vt = linalg::Matrix::from_col_major(c, blk.rank(), blk.v().to_vec()).transpose();
            linalg::gemm(r, blk.rank(), c, blk.u(), vt.as_slice(), &mut full);
            for j in 0..c {
                for i in 0..r {
                    let v = full[j * r + i];
                    p[(nb.lo + j) * n + na.lo + i] = v;
                    p[(na.lo + i) * n + nb.lo + j] = v;
                }
            }
        }
        for a in 0..n {
            let (cols, vals) = self.near.row(a);
            for (&b, &v) in cols.iter().zip(vals) {
                p[b * n + a] += v;
            }
        }
        let perm = tree.perm();
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
            let src = &p[perm[j] * n..(perm[j] + 1) * n];
            for (i, v) in col.iter_mut().enumerate() {
                *v = src[perm[i]];
            }
        });
        out
    }
}

/// `sqrt(Σ (K̃_ij - K_ij)² / Σ K_ij²)` over `samples` seeded uniform index
/// pairs, or over all pairs when `samples >= n²`.
pub fn estimate_rel_error<K: KernelMatrix + ?Sized>(
    h: &HMatrix,
    kernel: &K,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let n = h.n();
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if kernel.size() != n {
        return Err(Error::invalid(format!(
            "kernel has size {}, matrix {n}",
            kernel.size()
        )));
    }
    let term = |i: usize, j: usize| {
        let k = kernel.entry(i, j);
        let d = h.entry(i, j) - k;
        (d * d, k * k)
    };
    let add = |x: (f64, f64), y: (f64, f64)| (x.0 + y.0, x.1 + y.1);
    let parts: Vec<(f64, f64)> = if (samples as u128) >= (n as u128) * (n as u128) {
        (0..n)
            .into_par_iter()
            .map(|j| (0..n).map(|i| term(i, j)).fold((0.0, 0.0), add))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(usize, usize)> = (0..samples)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        pairs
            .par_chunks(1024)
            .map(|c| c.iter().map(|&(i, j)| term(i, j)).fold((0.0, 0.0), add))
            .collect()
    };
    let (num, den) = parts.into_iter().fold((0.0, 0.0), add);
    Ok(if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        (num / den).sqrt()
    })
}

#[cfg(test)]
mod tests;
