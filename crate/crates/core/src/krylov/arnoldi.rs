use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LinearOp;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// A second Gram-Schmidt pass is taken whenever the new residual keeps less
/// than this fraction of the norm it had before projection.
pub const DGKS_RATIO: f64 = 0.717;

/// Residual norms below `BREAKDOWN_TOL * scale(H)` signal an invariant subspace.
pub const BREAKDOWN_TOL: f64 = 1e-14;

/// `A X = X H + r e_mᵀ` with orthonormal `X` (n × m) and upper Hessenberg `H`.
///
/// For symmetric operators `H` is kept exactly symmetric tridiagonal.
#[derive(Debug, Clone)]
pub struct ArnoldiFactorization {
    n: usize,
    basis: Vec<f64>,
    h: Matrix,
    residual: Vec<f64>,
    symmetric: bool,
    invariant: bool,
    scale: f64,
}

/// Runs `k` Arnoldi steps from `start`.
///
/// Stops early at a breakdown (`‖r_j‖` negligible), leaving a shorter
/// factorization flagged as spanning an invariant subspace.
pub fn arnoldi_factorization<O: LinearOp + ?Sized>(
    op: &O,
    start: &[f64],
    k: usize,
) -> Result<ArnoldiFactorization> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= n, got k={k} n={n}")));
    }
    let mut f = ArnoldiFactorization::start(op, start)?;
    f.extend(op, k)?;
    Ok(f)
}

impl ArnoldiFactorization {
    /// Normalizes `start` into the first basis vector and performs the first step.
    pub fn start<O: LinearOp + ?Sized>(op: &O, start: &[f64]) -> Result<Self> {
        let n = op.dim();
        if start.len() != n {
            return Err(Error::invalid(format!(
                "start vector has length {}, operator dimension is {n}",
                start.len()
            )));
        }
        let norm = linalg::norm2(start);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid("start vector must be nonzero and finite"));
        }
        let mut f = ArnoldiFactorization {
            n,
            basis: Vec::with_capacity(n * 24),
            h: Matrix::zeros(0, 0),
            residual: vec![0.0; n],
            symmetric: op.is_symmetric(),
            invariant: false,
            scale: 0.0,
        };
        let x1: Vec<f64> = start.iter().map(|v| v / norm).collect();
        f.push_step(op, &x1, 0.0)?;
        f.flag_if_invariant();
        Ok(f)
    }

    pub(crate) fn from_parts(
        n: usize,
        basis: Vec<f64>,
        h: Matrix,
        residual: Vec<f64>,
        symmetric: bool,
        scale: f64,
    ) -> Self {
        ArnoldiFactorization {
            n,
            basis,
            h,
            residual,
            symmetric,
            invariant: false,
            scale,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of basis vectors `m`.
    pub fn steps(&self) -> usize {
        self.h.rows()
    }

    /// n × m column-major.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn basis_vector(&self, j: usize) -> &[f64] {
        &self.basis[j * self.n..(j + 1) * self.n]
    }

    pub fn hessenberg(&self) -> &Matrix {
        &self.h
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_norm(&self) -> f64 {
        linalg::norm2(&self.residual)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// True when a breakdown showed that the basis spans an invariant subspace.
    pub fn is_invariant(&self) -> bool {
        self.invariant
    }

    pub(crate) fn scale(&self) -> f64 {
        self.scale
    }

    /// Extends to `m` steps, stopping early at a breakdown.
    pub fn extend<O: LinearOp + ?Sized>(&mut self, op: &O, m: usize) -> Result<()> {
        self.extend_inner(op, m, None)
    }

    /// Extends to exactly `m` steps; at a breakdown a seeded random vector
    /// orthogonal to the basis is injected with zero coupling.
    pub(crate) fn extend_filling<O: LinearOp + ?Sized>(
        &mut self,
        op: &O,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        self.extend_inner(op, m, Some(rng))
    }

    fn extend_inner<O: LinearOp + ?Sized>(
        &mut self,
        op: &O,
        m: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<()> {
        if op.dim() != self.n {
            return Err(Error::invalid("operator dimension changed"));
        }
        if m > self.n {
            return Err(Error::invalid(format!(
                "cannot extend beyond n={} steps",
                self.n
            )));
        }
        while self.steps() < m {
            let beta = self.residual_norm();
            let (next, coupling) = if self.is_breakdown(beta) {
                match rng.as_deref_mut() {
                    None => {
                        self.invariant = true;
                        self.residual.fill(0.0);
                        return Ok(());
                    }
                    Some(rng) => (self.random_orthogonal(rng)?, 0.0),
                }
            } else {
                (self.residual.iter().map(|v| v / beta).collect(), beta)
            };
            self.invariant = false;
            self.push_step(op, &next, coupling)?;
        }
        self.flag_if_invariant();
        Ok(())
    }

    fn is_breakdown(&self, beta: f64) -> bool {
        !(beta > BREAKDOWN_TOL * self.scale)
    }

    fn flag_if_invariant(&mut self) {
        if self.is_breakdown(self.residual_norm()) {
            self.invariant = true;
            self.residual.fill(0.0);
        }
    }

    /// Appends `x` (unit, orthogonal to the basis) coupled to the previous
    /// vector by `coupling`, applies the operator and orthogonalizes.
    fn push_step<O: LinearOp + ?Sized>(&mut self, op: &O, x: &[f64], coupling: f64) -> Result<()> {
        let j = self.steps();
        self.basis.extend_from_slice(x);
        let mut z = vec![0.0; self.n];
        op.apply(x, &mut z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("operator produced a non-finite value".into()));
        }
        let h = orthogonalize(&self.basis, self.n, &mut z);
        let mut next = self.h.resized(j + 1, j + 1);
        if j > 0 {
            next[(j, j - 1)] = coupling;
        }
        if self.symmetric {
            if j > 0 {
                next[(j - 1, j)] = coupling;
            }
            next[(j, j)] = h[j];
        } else {
            for (i, hi) in h.iter().enumerate() {
                next[(i, j)] = *hi;
            }
        }
        self.h = next;
        self.residual = z;
        self.scale = self.scale.max(coupling).max(h[j].abs());
        Ok(())
    }

    fn random_orthogonal(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        for _ in 0..8 {
            let mut v: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            orthogonalize(&self.basis, self.n, &mut v);
            orthogonalize(&self.basis, self.n, &mut v);
            let norm = linalg::norm2(&v);
            if norm > 1e-8 {
                linalg::scale(1.0 / norm, &mut v);
                return Ok(v);
            }
        }
        Err(Error::Numerical("could not extend the Krylov basis".into()))
    }

    /// `max |XᵀX - I|`
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.steps();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..=i {
                let g = linalg::dot(self.basis_vector(i), self.basis_vector(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - expect).abs());
            }
        }
        worst
    }

    /// `max |Xᵀ r|`
    pub fn residual_orthogonality(&self) -> f64 {
        (0..self.steps())
            .map(|j| linalg::dot(self.basis_vector(j), &self.residual).abs())
            .fold(0.0, f64::max)
    }

    /// `‖A X - X H - r e_mᵀ‖_F`, using `m` operator applications.
    pub fn factorization_error<O: LinearOp + ?Sized>(&self, op: &O) -> f64 {
        let (n, m) = (self.n, self.steps());
        let mut xh = vec![0.0; n * m];
        linalg::gemm(n, m, m, &self.basis, self.h.as_slice(), &mut xh);
        let mut total = 0.0;
        let mut ax = vec![0.0; n];
        for j in 0..m {
            op.apply(self.basis_vector(j), &mut ax);
            for i in 0..n {
                let mut d = ax[i] - xh[j * n + i];
                if j + 1 == m {
                    d -= self.residual[i];
                }
                total += d * d;
            }
        }
        total.sqrt()
    }

    /// Largest entry outside the tridiagonal band of `H`.
    pub fn off_tridiagonal(&self) -> f64 {
        let m = self.steps();
        let mut worst: f64 = 0.0;
        for j in 0..m {
            for i in 0..m {
                if i.abs_diff(j) > 1 {
                    worst = worst.max(self.h[(i, j)].abs());
                }
            }
        }
        worst
    }
}

/// Orthogonalizes `z` against the `basis` columns by classical Gram-Schmidt
/// with DGKS refinement, returning the projection coefficients.
pub(crate) fn orthogonalize(basis: &[f64], n: usize, z: &mut [f64]) -> Vec<f64> {
    let m = basis.len() / n;
    let mut h = vec![0.0; m];
    let mut before = linalg::norm2(z);
    let mut after = project_out(basis, n, z, &mut h);
    let mut passes = 0;
    while after <= DGKS_RATIO * before {
        if passes == 2 {
            // z lies numerically in span(X)
            z.fill(0.0);
            break;
        }
        before = after;
        after = project_out(basis, n, z, &mut h);
        passes += 1;
    }
    h
}

fn project_out(basis: &[f64], n: usize, z: &mut [f64], h: &mut [f64]) -> f64 {
    let coeffs: Vec<f64> = basis.chunks_exact(n).map(|x| linalg::dot(x, z)).collect();
    for (x, c) in basis.chunks_exact(n).zip(&coeffs) {
        linalg::axpy(-c, x, z);
    }
    for (hi, c) in h.iter_mut().zip(&coeffs) {
        *hi += c;
    }
    linalg::norm2(z)
}

pub(crate) fn seeded_start(n: usize, seed: u64) -> (Vec<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (v, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::{tridiagonal_eigen, DenseOp};

    fn random_symmetric(n: usize, seed: u64) -> DenseOp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..=j {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[j * n + i] = v;
                a[i * n + j] = v;
            }
        }
        DenseOp::new(n, a).unwrap()
    }

    #[test]
    fn identity_breaks_down_immediately() {
        let op = DenseOp::diagonal(&[1.0; 5]);
        let f = arnoldi_factorization(&op, &[1.0, 2.0, 3.0, 4.0, 5.0], 1).unwrap();
        assert_eq!(f.steps(), 1);
        assert_eq!(f.hessenberg()[(0, 0)], 1.0);
        assert!(f.is_invariant());
        assert_eq!(f.residual_norm(), 0.0);

        let f = arnoldi_factorization(&op, &[1.0; 5], 4).unwrap();
        assert_eq!(f.steps(), 1);
        assert!(f.is_invariant());
    }

    #[test]
    fn full_krylov_space_of_diagonal() {
        let vals: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        let op = DenseOp::diagonal(&vals);
        let f = arnoldi_factorization(&op, &[1.0; 8], 8).unwrap();
        assert_eq!(f.steps(), 8);
        let h = f.hessenberg();
        let diag: Vec<f64> = (0..8).map(|i| h[(i, i)]).collect();
        let off: Vec<f64> = (0..7).map(|i| h[(i + 1, i)]).collect();
        let (ev, _) = tridiagonal_eigen(&diag, &off).unwrap();
        for (a, b) in ev.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn random_symmetric_invariants() {
        let op = random_symmetric(64, 11);
        let (start, _) = seeded_start(64, 1);
        let f = arnoldi_factorization(&op, &start, 20).unwrap();
        assert_eq!(f.steps(), 20);
        assert!(f.orthonormality_error() <= 1e-10);
        assert!(f.residual_orthogonality() <= 1e-10);
        assert!(f.factorization_error(&op) <= 1e-10);
        assert_eq!(f.off_tridiagonal(), 0.0);
    }

    #[test]
    fn nonsymmetric_is_hessenberg() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = DenseOp::new(n, a).unwrap();
        assert!(!op.is_symmetric());
        let (start, _) = seeded_start(n, 2);
        let f = arnoldi_factorization(&op, &start, 12).unwrap();
        let h = f.hessenberg();
        for j in 0..12 {
            for i in (j + 2)..12 {
                assert_eq!(h[(i, j)], 0.0);
            }
        }
        assert!(f.orthonormality_error() <= 1e-10);
        assert!(f.factorization_error(&op) <= 1e-8 * h.frobenius_norm());
    }

    #[test]
    fn argument_errors() {
        let op = DenseOp::diagonal(&[1.0, 2.0]);
        assert!(arnoldi_factorization(&op, &[0.0, 0.0], 1).is_err());
        assert!(arnoldi_factorization(&op, &[1.0, 1.0], 3).is_err());
        assert!(arnoldi_factorization(&op, &[1.0], 1).is_err());
    }
}
