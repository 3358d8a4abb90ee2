use std::str::FromStr;

use super::arnoldi::seeded_start;
use super::{implicit_restart, symmetric_eigen, ArnoldiFactorization, CountingOp, LinearOp};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Which end of the spectrum to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    LargestMagnitude,
    LargestAlgebraic,
    SmallestAlgebraic,
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lm" | "largest-magnitude" => Ok(Which::LargestMagnitude),
            "la" | "largest-algebraic" => Ok(Which::LargestAlgebraic),
            "sa" | "smallest-algebraic" => Ok(Which::SmallestAlgebraic),
            other => Err(Error::invalid(format!(
                "unknown eigenvalue selection '{other}'"
            ))),
        }
    }
}

impl Which {
    /// Indices of `theta` ordered from most to least wanted.
    fn rank(self, theta: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..theta.len()).collect();
        match self {
            Which::LargestAlgebraic => idx.sort_by(|&a, &b| theta[b].total_cmp(&theta[a])),
            Which::SmallestAlgebraic => idx.sort_by(|&a, &b| theta[a].total_cmp(&theta[b])),
            Which::LargestMagnitude => idx.sort_by(|&a, &b| {
                theta[b]
                    .abs()
                    .total_cmp(&theta[a].abs())
                    .then(theta[b].total_cmp(&theta[a]))
            }),
        }
        idx
    }
}

#[derive(Debug, Clone)]
pub struct EigshOptions {
    pub k: usize,
    pub which: Which,
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
    /// Krylov subspace size; defaults to `min(n, max(2k + 1, 20))`.
    pub ncv: Option<usize>,
}

impl EigshOptions {
    pub fn new(k: usize) -> Self {
        EigshOptions {
            k,
            which: Which::LargestAlgebraic,
            tol: 1e-10,
            max_restarts: 500,
            seed: 0,
            ncv: None,
        }
    }

    pub fn which(mut self, which: Which) -> Self {
        self.which = which;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_restarts(mut self, max_restarts: usize) -> Self {
        self.max_restarts = max_restarts;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ncv(mut self, ncv: usize) -> Self {
        self.ncv = Some(ncv);
        self
    }
}

#[derive(Debug, Clone)]
pub struct EigResult {
    /// Ordered from most to least wanted.
    pub values: Vec<f64>,
    /// n × values.len(), unit columns.
    pub vectors: Matrix,
    /// `‖A v_i - λ_i v_i‖₂`
    pub residual_norms: Vec<f64>,
    /// Implicit restarts performed.
    pub iterations: usize,
    pub matvecs: usize,
    pub converged: bool,
}

// ARPACK's floor for the convergence test, eps^(2/3)
fn convergence_floor() -> f64 {
    f64::EPSILON.powf(2.0 / 3.0)
}

/// Implicitly restarted Lanczos for a few eigenpairs of a symmetric operator.
///
/// Each cycle extends the factorization to `ncv` steps, takes the Ritz pairs
/// of the tridiagonal projection, accepts a wanted pair once
/// `|β_m s_{m,i}| <= tol * max(|θ_i|, eps^(2/3))`, and otherwise restarts with
/// the unwanted Ritz values as exact shifts. The kept subspace grows by
/// `min(nconv, p/2)` to keep converged pairs from being filtered away.
///
/// Without convergence after `max_restarts` the converged subset is returned
/// with `converged == false`.
pub fn eigsh<O: LinearOp + ?Sized>(op: &O, opts: &EigshOptions) -> Result<EigResult> {
    let n = op.dim();
    let k = opts.k;
    if !op.is_symmetric() {
        return Err(Error::invalid("eigsh needs a symmetric operator"));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("need 1 <= k < n, got k={k} n={n}")));
    }
    if !(opts.tol >= 0.0 && opts.tol.is_finite()) {
        return Err(Error::invalid(format!(
            "tolerance must be >= 0, got {}",
            opts.tol
        )));
    }
    let m = opts.ncv.unwrap_or_else(|| (2 * k + 1).max(20)).min(n);
    if m <= k {
        return Err(Error::invalid(format!(
            "subspace size {m} must exceed k={k}"
        )));
    }
    let counted = CountingOp::new(op);
    let (start, mut rng) = seeded_start(n, opts.seed);
    let mut f = ArnoldiFactorization::start(&counted, &start)?;
    f.extend_filling(&counted, m, &mut rng)?;

    let tol = opts.tol.max(f64::EPSILON);
    let mut iterations = 0;
    let (theta, s, wanted, accepted) = loop {
        let (theta, s) = symmetric_eigen(f.hessenberg())?;
        let ranked = opts.which.rank(&theta);
        let beta = f.residual_norm();
        let accepted: Vec<bool> = ranked
            .iter()
            .map(|&i| {
                let est = beta * s[(m - 1, i)].abs();
                est <= tol * theta[i].abs().max(convergence_floor())
            })
            .collect();
        let nconv = accepted[..k].iter().filter(|&&a| a).count();
        if nconv == k || m == n || iterations >= opts.max_restarts {
            break (theta, s, ranked, accepted);
        }
        let keep = (k + nconv.min((m - k) / 2)).min(m - 1);
        let shifts: Vec<f64> = ranked[keep..].iter().map(|&i| theta[i]).collect();
        f = implicit_restart(&f, &shifts)?;
        f.extend_filling(&counted, m, &mut rng)?;
        iterations += 1;
    };

    let converged = accepted[..k].iter().all(|&a| a);
    let selected: Vec<usize> = wanted[..k]
        .iter()
        .zip(&accepted)
        .filter(|(_, &ok)| converged || ok)
        .map(|(&i, _)| i)
        .collect();

    let sel = Matrix::from_fn(m, selected.len(), |r, c| s[(r, selected[c])]);
    let mut vecs = vec![0.0; n * selected.len()];
    linalg::gemm(n, m, selected.len(), f.basis(), sel.as_slice(), &mut vecs);
    let mut vectors = Matrix::from_col_major(n, selected.len(), vecs);
    let values: Vec<f64> = selected.iter().map(|&i| theta[i]).collect();

    let mut residual_norms = Vec::with_capacity(values.len());
    let mut av = vec![0.0; n];
    for (c, &lambda) in values.iter().enumerate() {
        let v = vectors.col_mut(c);
        let norm = linalg::norm2(v);
        linalg::scale(1.0 / norm, v);
        // deterministic sign: largest entry positive
        let big = v
            .iter()
            .fold(0.0f64, |b, x| if x.abs() > b.abs() { *x } else { b });
        if big < 0.0 {
            linalg::scale(-1.0, v);
        }
        counted.apply(v, &mut av);
        linalg::axpy(-lambda, v, &mut av);
        residual_norms.push(linalg::norm2(&av));
    }

    Ok(EigResult {
        values,
        vectors,
        residual_norms,
        iterations,
        matvecs: counted.count(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::DenseOp;

    #[test]
    fn diagonal_top_five() {
        let vals: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let op = DenseOp::diagonal(&vals);
        let r = eigsh(&op, &EigshOptions::new(5)).unwrap();
        assert!(r.converged);
        for (got, want) in r.values.iter().zip([100.0, 99.0, 98.0, 97.0, 96.0]) {
            assert!((got - want).abs() < 1e-8, "{:?}", r.values);
        }
        for res in &r.residual_norms {
            assert!(*res < 1e-8);
        }
    }

    #[test]
    fn smallest_and_magnitude() {
        let vals: Vec<f64> = (0..60).map(|v| v as f64 - 45.5).collect();
        let op = DenseOp::diagonal(&vals);
        let r = eigsh(&op, &EigshOptions::new(3).which(Which::SmallestAlgebraic)).unwrap();
        assert!((r.values[0] + 45.5).abs() < 1e-8);
        assert!((r.values[2] + 43.5).abs() < 1e-8);
        let r = eigsh(&op, &EigshOptions::new(2).which(Which::LargestMagnitude)).unwrap();
        assert!((r.values[0] + 45.5).abs() < 1e-8);
        assert!((r.values[1] + 44.5).abs() < 1e-8);
    }

    #[test]
    fn isotropic_spectrum() {
        let op = DenseOp::diagonal(&[2.5; 40]);
        let r = eigsh(&op, &EigshOptions::new(3)).unwrap();
        assert!(r.converged);
        assert_eq!(r.values.len(), 3);
        for v in &r.values {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let g = r.vectors.transpose().matmul(&r.vectors);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn small_operator_uses_full_space() {
        let op = DenseOp::diagonal(&[3.0, 1.0, 2.0, 5.0]);
        let r = eigsh(&op, &EigshOptions::new(2)).unwrap();
        assert!(r.converged);
        assert!((r.values[0] - 5.0).abs() < 1e-12 && (r.values[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let vals: Vec<f64> = (0..400).map(|i| 1.0 + 1e-6 * i as f64).collect();
        let op = DenseOp::diagonal(&vals);
        let r = eigsh(&op, &EigshOptions::new(5).tol(1e-14).max_restarts(0)).unwrap();
        assert!(!r.converged);
        assert!(r.values.len() < 5);
    }

    #[test]
    fn argument_errors() {
        let op = DenseOp::diagonal(&[1.0, 2.0, 3.0]);
        assert!(eigsh(&op, &EigshOptions::new(3)).is_err());
        assert!(eigsh(&op, &EigshOptions::new(0)).is_err());
        let ns = DenseOp::new(2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(eigsh(&ns, &EigshOptions::new(1)).is_err());
    }
}
