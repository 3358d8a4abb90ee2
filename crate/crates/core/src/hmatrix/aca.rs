use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::LowRankBlock;
use crate::error::{Error, Result};
use crate::linalg;

/// Rows tried in a row before a block is declared numerically zero.
const ZERO_ROW_ATTEMPTS: usize = 32;
const PAR_MIN: usize = 1024;
const CHUNK: usize = 512;

/// Adaptive cross approximation with partial pivoting of the `rows × cols`
/// block given by `entry`.
///
/// A new cross `u vᵀ` is kept while `‖u‖‖v‖ > tol ‖Σ u_l v_lᵀ‖_F`, the norm of
/// the sum being tracked exactly from the inner products of the factors.
pub(crate) fn aca<F>(
    rows: usize,
    cols: usize,
    entry: F,
    tol: f64,
    rank_max: usize,
    seed: u64,
) -> Result<LowRankBlock>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let limit = rank_max.min(rows).min(cols);
    let mut u: Vec<f64> = Vec::new();
    let mut vt: Vec<f64> = Vec::new();
    let mut rank = 0;
    if limit == 0 {
        return Ok(LowRankBlock::new(rows, cols, 0, u, vt));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_row = vec![false; rows];
    let mut used_col = vec![false; cols];
    let mut pivot_row = rng.gen_range(0..rows);
    let mut norm_sq = 0.0f64;
    let mut zero_rows = 0;

    while rank < limit {
        used_row[pivot_row] = true;
        let mut row = eval(cols, |j| entry(pivot_row, j))?;
        subtract(&mut row, &u, &vt, rows, cols, rank, pivot_row);
        let pivot_col = argmax_unused(&row, &used_col);
        let pivot = pivot_col.map(|j| row[j]).unwrap_or(0.0);
        if pivot == 0.0 {
            zero_rows += 1;
            match next_unused(&used_row, &mut rng) {
                Some(r) if zero_rows < ZERO_ROW_ATTEMPTS => {
                    pivot_row = r;
                    continue;
                }
                _ => break,
            }
        }
        let pivot_col = pivot_col.expect("nonzero pivot has a column");
        let mut col = eval(rows, |i| entry(i, pivot_col))?;
        subtract(&mut col, &vt, &u, cols, rows, rank, pivot_col);
        linalg::scale(1.0 / pivot, &mut row);

        let (uu, vv) = (linalg::dot(&col, &col), linalg::dot(&row, &row));
        let mut cross = 0.0;
        for l in 0..rank {
            cross += linalg::dot(&u[l * rows..(l + 1) * rows], &col)
                * linalg::dot(&vt[l * cols..(l + 1) * cols], &row);
        }
        let candidate = norm_sq + 2.0 * cross + uu * vv;
        if (uu * vv).sqrt() <= tol * candidate.max(0.0).sqrt() {
            break;
        }
        norm_sq = candidate;
        used_col[pivot_col] = true;
        u.extend_from_slice(&col);
        vt.extend_from_slice(&row);
        rank += 1;
        zero_rows = 0;
        match argmax_unused(&col, &used_row) {
            Some(i) if col[i] != 0.0 => pivot_row = i,
            _ => match next_unused(&used_row, &mut rng) {
                Some(i) => pivot_row = i,
                None => break,
            },
        }
    }
    Ok(LowRankBlock::new(rows, cols, rank, u, vt))
}

fn eval(len: usize, f: impl Fn(usize) -> f64 + Sync) -> Result<Vec<f64>> {
    let v: Vec<f64> = if len >= PAR_MIN {
        (0..len).into_par_iter().map(&f).collect()
    } else {
        (0..len).map(f).collect()
    };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite kernel entry".into()));
    }
    Ok(v)
}

/// `out[j] -= Σ_l a_l[idx] b_l[j]` over the `rank` stored crosses.
fn subtract(
    out: &mut [f64],
    a: &[f64],
    b: &[f64],
    a_len: usize,
    b_len: usize,
    rank: usize,
    idx: usize,
) {
    if rank == 0 {
        return;
    }
    let coef: Vec<f64> = (0..rank).map(|l| a[l * a_len + idx]).collect();
    let work = |(c, chunk): (usize, &mut [f64])| {
        let start = c * CHUNK;
        for (l, &cl) in coef.iter().enumerate() {
            let bl = &b[l * b_len + start..l * b_len + start + chunk.len()];
            linalg::axpy(-cl, bl, chunk);
        }
    };
    if out.len() >= PAR_MIN {
        out.par_chunks_mut(CHUNK).enumerate().for_each(work);
    } else {
        out.chunks_mut(CHUNK).enumerate().for_each(work);
    }
}

fn argmax_unused(v: &[f64], used: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        if used[i] {
            continue;
        }
        if best.is_none_or(|(_, b)| x.abs() > b) {
            best = Some((i, x.abs()));
        }
    }
    best.map(|(i, _)| i)
}

fn next_unused(used: &[bool], rng: &mut ChaCha8Rng) -> Option<usize> {
    let free = used.iter().filter(|u| !**u).count();
    if free == 0 {
        return None;
    }
    let pick = rng.gen_range(0..free);
    used.iter()
        .enumerate()
        .filter(|(_, u)| !**u)
        .nth(pick)
        .map(|(i, _)| i)
}
