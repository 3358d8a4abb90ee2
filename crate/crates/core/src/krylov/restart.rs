use super::ArnoldiFactorization;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Compresses an `m`-step factorization to `k = m - p` steps by applying the
/// `p` shifts as implicitly shifted QR steps on `H`.
///
/// With `Q` the accumulated rotations, `H⁺ = QᵀHQ`, `X⁺ = XQ`, and because
/// the first `k - 1` entries of `e_mᵀQ` vanish the leading `k` columns satisfy
/// `A X⁺_k = X⁺_k H⁺_k + r⁺ e_kᵀ` with `r⁺ = X Q e_{k+1} H⁺[k+1, k] + r Q[m, k]`.
pub fn implicit_restart(f: &ArnoldiFactorization, shifts: &[f64]) -> Result<ArnoldiFactorization> {
    let m = f.steps();
    let p = shifts.len();
    if p == 0 {
        return Ok(f.clone());
    }
    if p >= m {
        return Err(Error::invalid(format!(
            "{p} shifts would leave nothing of a {m}-step factorization"
        )));
    }
    if shifts.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("shifts must be finite"));
    }
    let k = m - p;
    let n = f.n();
    let mut h = f.hessenberg().clone();
    let mut q = Matrix::identity(m);
    let rest = if f.is_symmetric() {
        deflate_exact_shifts(&mut h, &mut q, shifts)?
    } else {
        shifts.to_vec()
    };
    for &mu in &rest {
        qr_step(&mut h, &mut q, mu);
        if f.is_symmetric() {
            clean_tridiagonal(&mut h);
        }
    }

    // columns 0..=k of X Q
    let mut xq = vec![0.0; n * (k + 1)];
    let q_lead = q.leading(m, k + 1);
    linalg::gemm(n, m, k + 1, f.basis(), q_lead.as_slice(), &mut xq);

    let beta = h[(k, k - 1)];
    let sigma = q[(m - 1, k - 1)];
    let mut residual: Vec<f64> = xq[k * n..(k + 1) * n].iter().map(|v| v * beta).collect();
    linalg::axpy(sigma, f.residual(), &mut residual);
    xq.truncate(k * n);

    Ok(ArnoldiFactorization::from_parts(
        n,
        xq,
        h.leading(k, k),
        residual,
        f.is_symmetric(),
        f.scale(),
    ))
}

/// Applies every shift that coincides with a Ritz value of the symmetric `H`
/// by rotating that Ritz vector onto the last active coordinate, then
/// deflating it. This is the same Hessenberg `Q` a QR step with that exact
/// shift produces, without the forward instability of the QR recurrence when
/// the Ritz vector has a tiny last component. Returns the unmatched shifts.
fn deflate_exact_shifts(h: &mut Matrix, q: &mut Matrix, shifts: &[f64]) -> Result<Vec<f64>> {
    let m = h.rows();
    let (theta, y) = super::symmetric_eigen(h)?;
    let tol = EXACT_SHIFT_TOL * h.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut used = vec![false; m];
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut rest = Vec::new();
    for &mu in shifts {
        let nearest = (0..m)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (theta[a] - mu).abs().total_cmp(&(theta[b] - mu).abs()));
        match nearest {
            Some(j) if (theta[j] - mu).abs() <= tol => {
                used[j] = true;
                vectors.push((0..m).map(|i| y[(i, j)]).collect());
            }
            _ => rest.push(mu),
        }
    }
    let mut active = m;
    for d in 0..vectors.len() {
        for i in 0..active - 1 {
            let (a, b) = (vectors[d][i], vectors[d][i + 1]);
            let r = a.hypot(b);
            if r == 0.0 {
                continue;
            }
            let (c, s) = (b / r, -a / r);
            for j in 0..m {
                let (u, v) = (h[(i, j)], h[(i + 1, j)]);
                h[(i, j)] = c * u + s * v;
                h[(i + 1, j)] = -s * u + c * v;
            }
            for j in 0..m {
                let (u, v) = (h[(j, i)], h[(j, i + 1)]);
                h[(j, i)] = c * u + s * v;
                h[(j, i + 1)] = -s * u + c * v;
            }
            for j in 0..m {
                let (u, v) = (q[(j, i)], q[(j, i + 1)]);
                q[(j, i)] = c * u + s * v;
                q[(j, i + 1)] = -s * u + c * v;
            }
            for v in vectors[d..].iter_mut() {
                let (u, w) = (v[i], v[i + 1]);
                v[i] = c * u + s * w;
                v[i + 1] = -s * u + c * w;
            }
        }
        active -= 1;
        for j in 0..active {
            h[(active, j)] = 0.0;
            h[(j, active)] = 0.0;
        }
    }
    if !vectors.is_empty() {
        tridiagonalize_upward(h, q, active);
        clean_tridiagonal(h);
    }
    Ok(rest)
}

/// Reduces the leading `a × a` block of the symmetric `h` to tridiagonal form
/// with Householder reflectors that leave coordinate `a - 1` fixed, so the
/// residual term `r e_aᵀ` of the factorization is unchanged.
fn tridiagonalize_upward(h: &mut Matrix, q: &mut Matrix, a: usize) {
    let m = h.rows();
    for i in (2..a).rev() {
        // reflect h[i, 0..i] onto e_{i-1}
        let mut v: Vec<f64> = (0..i).map(|j| h[(i, j)]).collect();
        let tail: f64 = v[..i - 1].iter().map(|x| x * x).sum();
        if tail == 0.0 {
            continue;
        }
        let alpha = -(tail + v[i - 1] * v[i - 1]).sqrt().copysign(v[i - 1]);
        v[i - 1] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let tau = 2.0 / vv;
        // h ← P h P on rows and columns 0..i
        for c in 0..m {
            let dot: f64 = (0..i).map(|j| v[j] * h[(j, c)]).sum::<f64>() * tau;
            for j in 0..i {
                h[(j, c)] -= dot * v[j];
            }
        }
        for r in 0..m {
            let dot: f64 = (0..i).map(|j| h[(r, j)] * v[j]).sum::<f64>() * tau;
            for j in 0..i {
                h[(r, j)] -= dot * v[j];
            }
        }
        for r in 0..m {
            let dot: f64 = (0..i).map(|j| q[(r, j)] * v[j]).sum::<f64>() * tau;
            for j in 0..i {
                q[(r, j)] -= dot * v[j];
            }
        }
    }
}

const EXACT_SHIFT_TOL: f64 = 1e-10;

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        (1.0, 0.0)
    } else {
        (a / r, b / r)
    }
}

/// One shifted QR step `H - μI = QR`, `H ← RQ + μI`, accumulating `Q`.
fn qr_step(h: &mut Matrix, q: &mut Matrix, mu: f64) {
    let m = h.rows();
    for i in 0..m {
        h[(i, i)] -= mu;
    }
    let mut rotations = Vec::with_capacity(m.saturating_sub(1));
    for i in 0..m.saturating_sub(1) {
        let (c, s) = givens(h[(i, i)], h[(i + 1, i)]);
        for j in i..m {
            let (a, b) = (h[(i, j)], h[(i + 1, j)]);
            h[(i, j)] = c * a + s * b;
            h[(i + 1, j)] = -s * a + c * b;
        }
        h[(i + 1, i)] = 0.0;
        rotations.push((c, s));
    }
    for (i, &(c, s)) in rotations.iter().enumerate() {
        for r in 0..(i + 2).min(m) {
            let (a, b) = (h[(r, i)], h[(r, i + 1)]);
            h[(r, i)] = c * a + s * b;
            h[(r, i + 1)] = -s * a + c * b;
        }
        for r in 0..m {
            let (a, b) = (q[(r, i)], q[(r, i + 1)]);
            q[(r, i)] = c * a + s * b;
            q[(r, i + 1)] = -s * a + c * b;
        }
    }
    for i in 0..m {
        h[(i, i)] += mu;
    }
}

/// Restores exact symmetric tridiagonal form and deflates negligible couplings.
fn clean_tridiagonal(h: &mut Matrix) {
    let m = h.rows();
    for j in 0..m {
        for i in 0..m {
            if i.abs_diff(j) > 1 {
                h[(i, j)] = 0.0;
            }
        }
    }
    for i in 0..m.saturating_sub(1) {
        let mut b = 0.5 * (h[(i + 1, i)] + h[(i, i + 1)]);
        if b.abs() <= f64::EPSILON * (h[(i, i)].abs() + h[(i + 1, i + 1)].abs()) {
            b = 0.0;
        }
        h[(i + 1, i)] = b;
        h[(i, i + 1)] = b;
    }
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::krylov::arnoldi::seeded_start;
    use crate::krylov::{arnoldi_factorization, symmetric_eigen, DenseOp};

    #[test]
    fn no_shifts_is_a_noop() {
        let op = DenseOp::diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = arnoldi_factorization(&op, &[1.0, -1.0, 2.0, 0.5, 1.0, 3.0], 4).unwrap();
        let g = implicit_restart(&f, &[]).unwrap();
        assert_eq!(f.basis(), g.basis());
        assert_eq!(f.hessenberg(), g.hessenberg());
        assert_eq!(f.residual(), g.residual());
    }

    #[test]
    fn exact_shifts_filter_diagonal() {
        let vals: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let op = DenseOp::diagonal(&vals);
        let (start, _) = seeded_start(10, 4);
        let f = arnoldi_factorization(&op, &start, 10).unwrap();
        let g = implicit_restart(&f, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(g.steps(), 5);
        let (ritz, _) = symmetric_eigen(g.hessenberg()).unwrap();
        for (r, want) in ritz.iter().zip(6..=10) {
            assert!((r - want as f64).abs() < 1e-8, "{ritz:?}");
        }
        assert!(g.orthonormality_error() < 1e-8);
        assert!(g.factorization_error(&op) < 1e-8 * g.hessenberg().frobenius_norm());
    }

    #[test]
    fn exact_shifts_deflate_cleanly_on_wide_spectra() {
        let m = 40;
        let vals: Vec<f64> = (1..=m).map(|v| v as f64).collect();
        let op = DenseOp::diagonal(&vals);
        let (start, _) = seeded_start(m, 11);
        let f = arnoldi_factorization(&op, &start, m).unwrap();
        let shifts: Vec<f64> = (0..m).filter(|i| i % 3 != 0).map(|i| vals[i]).collect();
        let g = implicit_restart(&f, &shifts).unwrap();
        let (mut ritz, _) = symmetric_eigen(g.hessenberg()).unwrap();
        ritz.sort_by(f64::total_cmp);
        let kept: Vec<f64> = (0..m).filter(|i| i % 3 == 0).map(|i| vals[i]).collect();
        for (r, want) in ritz.iter().zip(&kept) {
            assert!((r - want).abs() < 1e-10, "{ritz:?}");
        }
        assert!(g.off_tridiagonal() == 0.0);
        assert!(g.orthonormality_error() < 1e-12);
        assert!(g.factorization_error(&op) < 1e-10 * g.hessenberg().frobenius_norm());
    }

    #[test]
    fn inexact_shifts_still_use_qr_steps() {
        let vals: Vec<f64> = (1..=12).map(|v| v as f64).collect();
        let op = DenseOp::diagonal(&vals);
        let (start, _) = seeded_start(12, 5);
        let f = arnoldi_factorization(&op, &start, 8).unwrap();
        let g = implicit_restart(&f, &[0.5, 3.25, 2.0]).unwrap();
        assert_eq!(g.steps(), 5);
        assert!(g.orthonormality_error() < 1e-12);
        assert!(g.factorization_error(&op) < 1e-10 * g.hessenberg().frobenius_norm());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn exact_shifts_keep_the_rest(m in 4usize..48, seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vals: Vec<f64> = (0..m).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
            vals.shuffle(&mut rng);
            let op = DenseOp::diagonal(&vals);
            let (start, _) = seeded_start(m, seed);
            let steps = rng.gen_range(3..=m);
            let f = arnoldi_factorization(&op, &start, steps).unwrap();
            let (theta, _) = symmetric_eigen(f.hessenberg()).unwrap();
            let p = rng.gen_range(1..steps);
            let mut idx: Vec<usize> = (0..steps).collect();
            idx.shuffle(&mut rng);
            let shifts: Vec<f64> = idx[..p].iter().map(|&i| theta[i]).collect();
            let mut kept: Vec<f64> = idx[p..].iter().map(|&i| theta[i]).collect();
            kept.sort_by(f64::total_cmp);
            let g = implicit_restart(&f, &shifts).unwrap();
            let (mut ritz, _) = symmetric_eigen(g.hessenberg()).unwrap();
            ritz.sort_by(f64::total_cmp);
            for (r, want) in ritz.iter().zip(&kept) {
                proptest::prop_assert!((r - want).abs() < 1e-9 * m as f64, "{:?} vs {:?}", ritz, kept);
            }
            proptest::prop_assert!(g.orthonormality_error() < 1e-10);
            proptest::prop_assert!(g.factorization_error(&op) < 1e-8 * g.hessenberg().frobenius_norm());
            proptest::prop_assert_eq!(g.off_tridiagonal(), 0.0);
        }
    }

    #[test]
    fn too_many_shifts() {
        let op = DenseOp::diagonal(&[1.0, 2.0, 3.0]);
        let f = arnoldi_factorization(&op, &[1.0, 1.0, 1.0], 3).unwrap();
        assert!(implicit_restart(&f, &[1.0, 2.0, 3.0]).is_err());
    }
}
