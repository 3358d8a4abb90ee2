use rayon::prelude::*;

use super::HMatrix;
use crate::error::{Error, Result};
use crate::krylov::LinearOp;
use crate::linalg::{self, dot_panel};

const PANEL: usize = 4;
const ROW_CHUNK: usize = 2048;

impl HMatrix {
    /// `K̃ x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matmat(x, 1)
    }

    /// `y = K̃ x` into a caller buffer.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::invalid(format!(
                "output has length {}, expected {}",
                y.len(),
                self.n()
            )));
        }
        y.copy_from_slice(&self.matvec(x)?);
        Ok(())
    }

    /// `K̃ X` for column-major `X` with `m` columns.
    ///
    /// Every output entry is accumulated in the same order whatever `m` and
    /// the thread count, so column `c` equals `matvec` of column `c` bit for bit.
    pub fn matmat(&self, x: &[f64], m: usize) -> Result<Vec<f64>> {
        let n = self.n();
        if m == 0 {
            return Err(Error::invalid("need at least one column"));
        }
        if x.len() != n * m {
            return Err(Error::invalid(format!(
                "input has {} entries, expected {n} x {m}",
                x.len()
            )));
        }
        let tree = &self.tree;
        let order = tree.order();
        let mut xp = vec![0.0; n * m];
        for c in 0..m {
            let (src, dst) = (&x[c * n..(c + 1) * n], &mut xp[c * n..(c + 1) * n]);
            for (pos, v) in dst.iter_mut().enumerate() {
                *v = src[order[pos]];
            }
        }

        let mut yp = vec![0.0; n * m];
        let leaves: Vec<usize> = tree.leaves().collect();
        let diag: Vec<(usize, Vec<f64>)> = leaves
            .par_iter()
            .map(|&id| {
                let node = tree.node(id);
                let block = &self.diag[self.leaf_slot[id]];
                (id, mul_t(block, node.len(), node.len(), &xp, n, node.lo, m))
            })
            .collect();
        for (id, z) in diag {
            scatter_add(&mut yp, n, m, tree.node(id).lo, tree.node(id).len(), &z);
        }

        for level in tree.levels().into_iter().rev() {
            let parts: Vec<_> = level
                .par_iter()
                .filter_map(|&id| Some((tree.node(id).children?, self.low_rank[id].as_ref()?)))
                .filter(|(_, blk)| blk.rank() > 0)
                .map(|([a, b], blk)| {
                    let (na, nb) = (tree.node(a), tree.node(b));
                    let r = blk.rank();
                    let t = mul_t(blk.v(), nb.len(), r, &xp, n, nb.lo, m);
                    let za = mul(blk.u(), na.len(), r, &t, m);
                    let s = mul_t(blk.u(), na.len(), r, &xp, n, na.lo, m);
                    let zb = mul(blk.v(), nb.len(), r, &s, m);
                    ((na.lo, na.len(), za), (nb.lo, nb.len(), zb))
                })
                .collect();
            for ((lo_a, len_a, za), (lo_b, len_b, zb)) in parts {
                scatter_add(&mut yp, n, m, lo_a, len_a, &za);
                scatter_add(&mut yp, n, m, lo_b, len_b, &zb);
            }
        }

        if self.near.nnz() > 0 {
            for c in 0..m {
                let xc = &xp[c * n..(c + 1) * n];
                yp[c * n..(c + 1) * n]
                    .par_chunks_mut(ROW_CHUNK)
                    .enumerate()
                    .for_each(|(k, chunk)| {
                        for (o, yi) in chunk.iter_mut().enumerate() {
                            let (cols, vals) = self.near.row(k * ROW_CHUNK + o);
                            let mut acc = 0.0;
                            for (&j, &v) in cols.iter().zip(vals) {
                                acc += v * xc[j];
                            }
                            *yi += acc;
                        }
                    });
            }
        }

        let mut y = vec![0.0; n * m];
        for c in 0..m {
            let (src, dst) = (&yp[c * n..(c + 1) * n], &mut y[c * n..(c + 1) * n]);
            for (pos, v) in src.iter().enumerate() {
                dst[order[pos]] = *v;
            }
        }
        Ok(y)
    }

    /// Stored scalars read by one matvec; the low-rank factors are read twice.
    pub fn matvec_touches(&self) -> usize {
        self.diag.iter().map(Vec::len).sum::<usize>()
            + 2 * self
                .low_rank
                .iter()
                .flatten()
                .map(|b| b.stored_scalars())
                .sum::<usize>()
            + self.near.nnz()
    }
}

/// `Aᵀ X[lo..lo+len, :]` for column-major `a` (len × k); result is k × m.
fn mul_t(a: &[f64], len: usize, k: usize, x: &[f64], n: usize, lo: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    let xcol = |c: usize| &x[c * n + lo..c * n + lo + len];
    let mut c = 0;
    while c + PANEL <= m {
        let xs = [xcol(c), xcol(c + 1), xcol(c + 2), xcol(c + 3)];
        for j in 0..k {
            let d = dot_panel(&a[j * len..(j + 1) * len], xs);
            for (p, v) in d.into_iter().enumerate() {
                out[(c + p) * k + j] = v;
            }
        }
        c += PANEL;
    }
    for c in c..m {
        let xc = xcol(c);
        for j in 0..k {
            out[c * k + j] = linalg::dot(&a[j * len..(j + 1) * len], xc);
        }
    }
    out
}

/// `A T` for column-major `a` (len × k) and `t` (k × m); result is len × m.
fn mul(a: &[f64], len: usize, k: usize, t: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * m];
    if len == 0 {
        return out;
    }
    for (p, panel) in out.chunks_mut(len * PANEL).enumerate() {
        for j in 0..k {
            let aj = &a[j * len..(j + 1) * len];
            for (o, zc) in panel.chunks_exact_mut(len).enumerate() {
                linalg::axpy(t[(p * PANEL + o) * k + j], aj, zc);
            }
        }
    }
    out
}

fn scatter_add(y: &mut [f64], n: usize, m: usize, lo: usize, len: usize, z: &[f64]) {
    for c in 0..m {
        let dst = &mut y[c * n + lo..c * n + lo + len];
        for (d, s) in dst.iter_mut().zip(&z[c * len..(c + 1) * len]) {
            *d += *s;
        }
    }
}

impl LinearOp for HMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y)
            .expect("operator dimension checked by caller");
    }
}
