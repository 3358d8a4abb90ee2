use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of the symmetric tridiagonal matrix with diagonal `diag`
/// and sub-diagonal `offdiag`, by implicitly shifted QL iterations.
///
/// Returns eigenvalues in ascending order and the orthonormal eigenvectors as
/// matching columns.
pub fn tridiagonal_eigen(diag: &[f64], offdiag: &[f64]) -> Result<(Vec<f64>, Matrix)> {
    let n = diag.len();
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    if offdiag.len() + 1 != n {
        return Err(Error::invalid(format!(
            "tridiagonal of order {n} needs {} off-diagonal entries, got {}",
            n - 1,
            offdiag.len()
        )));
    }
    let mut d = diag.to_vec();
    // e[i] couples i and i + 1; e[n - 1] is scratch
    let mut e = offdiag.to_vec();
    e.push(0.0);
    let mut z = Matrix::identity(n);

    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_SWEEPS {
                return Err(Error::Numerical(
                    "tridiagonal QL iteration did not converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zk1 = z[(k, i + 1)];
                    let zk = z[(k, i)];
                    z[(k, i + 1)] = s * zk + c * zk1;
                    z[(k, i)] = c * zk - s * zk1;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = idx.iter().map(|&i| d[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| z[(r, idx[c])]);
    Ok((values, vectors))
}

/// Eigendecomposition of a small symmetric tridiagonal `Matrix`, reading
/// the diagonal and first sub-diagonal only.
pub fn symmetric_eigen(t: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = t.rows();
    let diag: Vec<f64> = (0..n).map(|i| t[(i, i)]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| t[(i + 1, i)]).collect();
    tridiagonal_eigen(&diag, &off)
}
