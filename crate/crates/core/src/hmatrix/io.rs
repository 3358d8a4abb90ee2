//! `HKM1` binary format, little-endian throughout:
//!
//! ```text
//! magic "HKM1"
//! u64 n, u64 leaf_size_max, u64 rank_max, f64 tol, u64 kappa, u64 dense_limit
//! f64 sigma (NaN when unknown)
//! u64 node_count
//! u64 order[n]                         tree position -> original index
//! node_count × (u64 lo, u64 hi, u64 level, u64 left, u64 right)
//!                                      children are u64::MAX for leaves
//! per leaf, by node id: f64 block[len * len], column-major
//! per internal node, by node id: u64 rank, f64 U[len_A * rank], f64 V[len_B * rank]
//! u64 nnz, u64 row_ptr[n + 1], u64 cols[nnz], f64 vals[nnz]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HMatrix, HParams, LowRankBlock, SparseSym};
use crate::error::{Error, Result};
use crate::htree::{ClusterTree, TreeNode};

pub const HMATRIX_MAGIC: &[u8; 4] = b"HKM1";

const NONE: u64 = u64::MAX;

pub fn save_hmatrix(h: &HMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_hmatrix(h, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_hmatrix(path: &Path) -> Result<HMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_hmatrix(BufReader::new(file))
}

pub fn write_hmatrix<W: Write>(h: &HMatrix, w: &mut W) -> std::io::Result<()> {
    let tree = &h.tree;
    let p = &h.params;
    w.write_all(HMATRIX_MAGIC)?;
    for v in [h.n(), p.leaf_size_max, p.rank_max] {
        put_u64(w, v as u64)?;
    }
    put_f64(w, p.tol)?;
    put_u64(w, p.kappa as u64)?;
    put_u64(w, p.dense_limit as u64)?;
    put_f64(w, h.sigma.unwrap_or(f64::NAN))?;
    put_u64(w, tree.nodes().len() as u64)?;
    for &o in tree.order() {
        put_u64(w, o as u64)?;
    }
    for node in tree.nodes() {
        let [a, b] = node.children.map_or([NONE; 2], |c| c.map(|x| x as u64));
        for v in [node.lo as u64, node.hi as u64, node.level as u64, a, b] {
            put_u64(w, v)?;
        }
    }
    for (id, node) in tree.nodes().iter().enumerate() {
        if node.is_leaf() {
            put_f64s(w, &h.diag[h.leaf_slot[id]])?;
        }
    }
    for (id, node) in tree.nodes().iter().enumerate() {
        if node.is_leaf() {
            continue;
        }
        let blk = h.low_rank[id].as_ref().expect("internal node has a block");
        put_u64(w, blk.rank() as u64)?;
        put_f64s(w, blk.u())?;
        put_f64s(w, blk.v())?;
    }
    put_u64(w, h.near.nnz() as u64)?;
    for &v in h.near.row_ptr() {
        put_u64(w, v as u64)?;
    }
    for &v in h.near.cols() {
        put_u64(w, v as u64)?;
    }
    put_f64s(w, h.near.vals())
}

pub fn read_hmatrix<R: Read>(r: R) -> Result<HMatrix> {
    let mut r = Reader(r);
    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != HMATRIX_MAGIC {
        return Err(Error::Malformed("not an HKM1 file".into()));
    }
    let n = r.count()?;
    let params = HParams {
        leaf_size_max: r.count()?,
        rank_max: r.count()?,
        tol: r.f64()?,
        kappa: r.count()?,
        dense_limit: r.count()?,
    };
    params
        .validate()
        .map_err(|e| Error::Malformed(format!("bad parameters: {e}")))?;
    let sigma = r.f64()?;
    let node_count = r.count()?;
    if n == 0 || node_count == 0 || node_count > 2 * n {
        return Err(Error::Malformed(format!(
            "{node_count} nodes for {n} points"
        )));
    }
    let order = (0..n).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let (lo, hi, level) = (r.count()?, r.count()?, r.count()?);
        let (a, b) = (r.u64()?, r.u64()?);
        let children = match (a, b) {
            (NONE, NONE) => None,
            (a, b) if a < node_count as u64 && b < node_count as u64 => {
                Some([a as usize, b as usize])
            }
            _ => return Err(Error::Malformed("child index out of range".into())),
        };
        nodes.push(TreeNode {
            level,
            lo,
            hi,
            children,
            parent: None,
        });
    }
    for id in 0..node_count {
        if let Some(children) = nodes[id].children {
            for c in children {
                nodes[c].parent = Some(id);
            }
        }
    }
    let tree = ClusterTree::from_parts(order, nodes, params.leaf_size_max)?;

    let mut leaf_slot = vec![usize::MAX; node_count];
    let mut diag = Vec::new();
    for (id, node) in tree.nodes().iter().enumerate() {
        if node.is_leaf() {
            leaf_slot[id] = diag.len();
            diag.push(r.f64s(node.len() * node.len())?);
        }
    }
    let mut low_rank = vec![None; node_count];
    for (id, node) in tree.nodes().iter().enumerate() {
        let Some([a, b]) = node.children else {
            continue;
        };
        let (ra, rb) = (tree.node(a).len(), tree.node(b).len());
        let rank = r.count()?;
        if rank > ra.min(rb) {
            return Err(Error::Malformed(format!("rank {rank} exceeds block size")));
        }
        let u = r.f64s(ra * rank)?;
        let v = r.f64s(rb * rank)?;
        low_rank[id] = Some(LowRankBlock::new(ra, rb, rank, u, v));
    }
    let nnz = r.count()?;
    if nnz > n.saturating_mul(n) {
        return Err(Error::Malformed("too many sparse entries".into()));
    }
    let row_ptr = (0..=n).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
    let cols = (0..nnz).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
    let vals = r.f64s(nnz)?;
    let monotone = row_ptr[0] == 0 && row_ptr.windows(2).all(|w| w[0] <= w[1]) && row_ptr[n] == nnz;
    if !monotone || cols.iter().any(|&c| c >= n) {
        return Err(Error::Malformed("inconsistent sparse structure".into()));
    }
    let mut extra = [0u8; 1];
    if r.0
        .read(&mut extra)
        .map_err(|e| Error::Malformed(e.to_string()))?
        != 0
    {
        return Err(Error::Malformed("trailing bytes".into()));
    }
    Ok(HMatrix {
        tree,
        params,
        leaf_slot,
        diag,
        low_rank,
        near: SparseSym::from_parts(row_ptr, cols, vals),
        sigma: (!sigma.is_nan()).then_some(sigma),
    })
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0
            .read_exact(buf)
            .map_err(|_| Error::Malformed("unexpected end of file".into()))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn count(&mut self) -> Result<usize> {
        let v = self.u64()?;
        // anything this large cannot be a real count
        if v > (1u64 << 40) {
            return Err(Error::Malformed(format!("implausible count {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}
