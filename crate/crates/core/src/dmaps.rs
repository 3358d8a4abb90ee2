//! Diffusion maps over a dense or hierarchically compressed Gaussian kernel.
//!
//! With `Q = W 1`, the density-normalized kernel is
//! `Wα = diag(Q^-α) W diag(Q^-α)` and the Markov matrix `P = diag(Qα)^-1 Wα`
//! with `Qα = Wα 1`. `P` is similar to the symmetric
//! `A = diag(Qα)^-1/2 Wα diag(Qα)^-1/2`, so every backend solves for the top
//! eigenpairs of `A` and maps eigenvectors back by `ψ = diag(Qα)^-1/2 v`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dense;
use crate::error::{Error, Result};
use crate::hmatrix::{compress, CompressionReport, HParams};
use crate::krylov::{eigsh, EigshOptions, LinearOp, Which};
use crate::linalg::{self, Matrix};
use crate::pointcloud::{gaussian_kernel, median_sigma, GaussianKernel, KernelMatrix, PointCloud};

/// Points sampled for the automatic bandwidth.
pub const SIGMA_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// LAPACK on the materialized operator.
    Dense,
    /// Restarted Lanczos on the materialized operator.
    LanczosDense,
    /// Restarted Lanczos on the compressed kernel.
    LanczosHmatrix,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Backend::Dense),
            "lanczos-dense" => Ok(Backend::LanczosDense),
            "lanczos-hmatrix" => Ok(Backend::LanczosHmatrix),
            other => Err(Error::invalid(format!(
                "unknown backend '{other}' (dense, lanczos-dense, lanczos-hmatrix)"
            ))),
        }
    }
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Dense => "dense",
            Backend::LanczosDense => "lanczos-dense",
            Backend::LanczosHmatrix => "lanczos-hmatrix",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusionParams {
    /// `None` picks the median pairwise distance of a seeded subsample.
    pub sigma: Option<f64>,
    pub alpha: f64,
    pub t: u32,
    pub k: usize,
    pub delta: f64,
    pub backend: Backend,
    pub hmatrix: HParams,
    pub eig_tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            sigma: None,
            alpha: 1.0,
            t: 1,
            k: 5,
            delta: 0.1,
            backend: Backend::LanczosHmatrix,
            hmatrix: HParams::default(),
            eig_tol: 1e-10,
            max_restarts: 500,
            seed: 0,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!(
                    "sigma must be finite and > 0, got {s}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.t < 1 {
            return Err(Error::invalid("t must be >= 1"));
        }
        if self.k < 2 {
            return Err(Error::invalid(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.eig_tol >= 0.0 && self.eig_tol.is_finite()) {
            return Err(Error::invalid(format!(
                "eigen tolerance must be >= 0, got {}",
                self.eig_tol
            )));
        }
        if self.backend == Backend::LanczosHmatrix {
            self.hmatrix.validate()?;
        }
        Ok(())
    }
}

/// `diag(s) W diag(s)` over a symmetric operator or kernel.
#[derive(Debug, Clone)]
pub struct Scaled<W> {
    inner: W,
    s: Vec<f64>,
}

impl<W> Scaled<W> {
    pub fn new(inner: W, s: Vec<f64>) -> Self {
        Scaled { inner, s }
    }

    pub fn scaling(&self) -> &[f64] {
        &self.s
    }

    pub fn inner(&self) -> &W {
        &self.inner
    }

    /// Same operator with `s` multiplied entrywise by `extra`.
    pub fn rescaled(self, extra: &[f64]) -> Self {
        let s = self.s.iter().zip(extra).map(|(a, b)| a * b).collect();
        Scaled {
            inner: self.inner,
            s,
        }
    }
}

impl<W: LinearOp> LinearOp for Scaled<W> {
    fn dim(&self) -> usize {
        self.s.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let sx: Vec<f64> = x.iter().zip(&self.s).map(|(a, b)| a * b).collect();
        self.inner.apply(&sx, y);
        for (yi, si) in y.iter_mut().zip(&self.s) {
            *yi *= si;
        }
    }
}

impl<W: KernelMatrix> KernelMatrix for Scaled<W> {
    fn size(&self) -> usize {
        self.s.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        (self.s[i] * self.s[j]) * self.inner.entry(i, j)
    }
}

/// `W 1`; every entry must be positive and finite.
pub fn row_sums<O: LinearOp + ?Sized>(w: &O) -> Result<Vec<f64>> {
    let n = w.dim();
    let mut q = vec![0.0; n];
    w.apply(&vec![1.0; n], &mut q);
    if let Some(i) = q.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateInput(format!(
            "row sum {i} is {}, must be positive",
            q[i]
        )));
    }
    Ok(q)
}

/// `(Wα, Q)` with `Wα = diag(Q^-α) W diag(Q^-α)` and `Q = W 1`.
pub fn alpha_normalize<W: LinearOp>(w: W, alpha: f64) -> Result<(Scaled<W>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let q = row_sums(&w)?;
    let s = q.iter().map(|v| v.powf(-alpha)).collect();
    Ok((Scaled::new(w, s), q))
}

/// `(A, Qα)` with `A = diag(Qα)^-1/2 Wα diag(Qα)^-1/2` and `Qα = Wα 1`.
pub fn markov_symmetrized<W: LinearOp>(wa: Scaled<W>) -> Result<(Scaled<W>, Vec<f64>)> {
    let qa = row_sums(&wa)?;
    let extra: Vec<f64> = qa.iter().map(|v| 1.0 / v.sqrt()).collect();
    Ok((wa.rescaled(&extra), qa))
}

/// `d(t) = max { l >= 1 : λ_l^t > δ λ_1^t }`, 0 when no index qualifies.
///
/// `eigenvalues` holds `λ_0 >= λ_1 >= ...`, the stationary value first.
pub fn intrinsic_dimension(eigenvalues: &[f64], t: u32, delta: f64) -> usize {
    if eigenvalues.len() < 2 || eigenvalues[1] <= 0.0 {
        return 0;
    }
    let threshold = delta * eigenvalues[1].powi(t as i32);
    (1..eigenvalues.len())
        .filter(|&l| eigenvalues[l].powi(t as i32) > threshold)
        .max()
        .unwrap_or(0)
}

/// Top eigenpairs of a Markov operator, right eigenvectors of `P`.
#[derive(Debug, Clone)]
pub struct MarkovSpectrum {
    pub eigenvalues: Vec<f64>,
    /// n × eigenvalues.len(), unit columns.
    pub psi: Matrix,
    /// Residuals of the symmetric problem.
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub matvecs: usize,
    pub converged: bool,
    /// `Q = W 1` before normalization.
    pub degrees: Vec<f64>,
}

/// Top `k` eigenpairs of the Markov matrix built from `w` by restarted Lanczos.
pub fn markov_eigs<W: LinearOp>(w: W, alpha: f64, opts: &EigshOptions) -> Result<MarkovSpectrum> {
    let (wa, degrees) = alpha_normalize(w, alpha)?;
    let (a, qa) = markov_symmetrized(wa)?;
    let opts = EigshOptions {
        which: Which::LargestAlgebraic,
        ..opts.clone()
    };
    let r = eigsh(&a, &opts)?;
    let psi = to_psi(r.vectors, &qa);
    Ok(MarkovSpectrum {
        eigenvalues: r.values,
        psi,
        residual_norms: r.residual_norms,
        iterations: r.iterations,
        matvecs: r.matvecs,
        converged: r.converged,
        degrees,
    })
}

/// Top `k` eigenpairs of the Markov matrix built from a dense kernel, by LAPACK.
pub fn markov_eigs_dense<W: KernelMatrix>(w: &W, alpha: f64, k: usize) -> Result<MarkovSpectrum> {
    let n = w.size();
    let dense = crate::pointcloud::DenseKernel::from_kernel(w, f64::NAN)?;
    let (wa, degrees) = alpha_normalize(&dense, alpha)?;
    let (a, qa) = markov_symmetrized(wa)?;
    let s = a.scaling();
    let mut mat = vec![0.0; n * n];
    mat.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        let src = dense.column(j);
        for (i, v) in col.iter_mut().enumerate() {
            *v = s[i] * src[i] * s[j];
        }
    });
    let e = dense::sym_eig_largest(&mat, n, k)?;
    let mut vectors = Matrix::from_col_major(n, k, e.vectors);
    let mut residual_norms = Vec::with_capacity(k);
    let mut av = vec![0.0; n];
    for (c, &lambda) in e.values.iter().enumerate() {
        a.apply(vectors.col(c), &mut av);
        linalg::axpy(-lambda, vectors.col(c), &mut av);
        residual_norms.push(linalg::norm2(&av));
        orient(vectors.col_mut(c));
    }
    Ok(MarkovSpectrum {
        eigenvalues: e.values,
        psi: to_psi(vectors, &qa),
        residual_norms,
        iterations: 0,
        matvecs: 0,
        converged: true,
        degrees,
    })
}

fn to_psi(mut v: Matrix, qa: &[f64]) -> Matrix {
    for c in 0..v.cols() {
        let col = v.col_mut(c);
        for (x, q) in col.iter_mut().zip(qa) {
            *x /= q.sqrt();
        }
        let norm = linalg::norm2(col);
        linalg::scale(1.0 / norm, col);
        orient(col);
    }
    v
}

/// Flips `v` so its largest-magnitude entry is positive.
fn orient(v: &mut [f64]) {
    let big = v
        .iter()
        .fold(0.0f64, |b, x| if x.abs() > b.abs() { *x } else { b });
    if big < 0.0 {
        linalg::scale(-1.0, v);
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub kernel_seconds: f64,
    pub eig_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    /// `λ_0 >= λ_1 >= ...`, `λ_0` the stationary value.
    pub eigenvalues: Vec<f64>,
    /// n × k right eigenvectors of `P`, unit columns.
    pub psi: Matrix,
    /// n × (k - 1), column `r - 1` is `λ_r^t ψ_r`, ordered by decreasing `λ_r^t`.
    pub coords: Matrix,
    pub d_t: usize,
    pub degrees: Vec<f64>,
    pub sigma: f64,
    pub converged: bool,
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub matvecs: usize,
    pub timings: Timings,
    pub compression: Option<CompressionReport>,
    pub params: DiffusionParams,
}

/// Runs the full pipeline: kernel, normalization, eigensolve, embedding.
pub fn diffusion_map(pc: &PointCloud, params: &DiffusionParams) -> Result<DiffusionModel> {
    params.validate()?;
    let n = pc.n();
    if n < params.k + 1 {
        return Err(Error::invalid(format!(
            "need n >= k + 1, got n={n} k={}",
            params.k
        )));
    }
    let start = Instant::now();
    let sigma = match params.sigma {
        Some(s) => s,
        None => median_sigma(pc, SIGMA_SAMPLE, params.seed)?,
    };
    let kernel = GaussianKernel::new(pc, sigma)?;
    let opts = EigshOptions::new(params.k)
        .tol(params.eig_tol)
        .max_restarts(params.max_restarts)
        .seed(params.seed);
    let mut timings = Timings::default();
    let mut compression = None;
    let spectrum = match params.backend {
        Backend::Dense => {
            let s = markov_eigs_dense(&kernel, params.alpha, params.k)?;
            timings.eig_seconds = start.elapsed().as_secs_f64();
            s
        }
        Backend::LanczosDense => {
            let dense = gaussian_kernel(pc, sigma)?;
            timings.kernel_seconds = start.elapsed().as_secs_f64();
            let s = markov_eigs(&dense, params.alpha, &opts)?;
            timings.eig_seconds = start.elapsed().as_secs_f64() - timings.kernel_seconds;
            s
        }
        Backend::LanczosHmatrix => {
            let (mut h, report) = compress(&kernel, &params.hmatrix, params.seed)?;
            h.set_sigma(Some(sigma));
            timings.kernel_seconds = start.elapsed().as_secs_f64();
            compression = Some(report);
            let s = markov_eigs(&h, params.alpha, &opts)?;
            timings.eig_seconds = start.elapsed().as_secs_f64() - timings.kernel_seconds;
            s
        }
    };
    timings.total_seconds = start.elapsed().as_secs_f64();
    let coords = embedding(&spectrum.eigenvalues, &spectrum.psi, params.t);
    Ok(DiffusionModel {
        d_t: intrinsic_dimension(&spectrum.eigenvalues, params.t, params.delta),
        eigenvalues: spectrum.eigenvalues,
        psi: spectrum.psi,
        coords,
        degrees: spectrum.degrees,
        sigma,
        converged: spectrum.converged,
        residual_norms: spectrum.residual_norms,
        iterations: spectrum.iterations,
        matvecs: spectrum.matvecs,
        timings,
        compression,
        params: params.clone(),
    })
}

/// Columns `λ_r^t ψ_r` for `r >= 1`, by decreasing `λ_r^t`.
pub fn embedding(eigenvalues: &[f64], psi: &Matrix, t: u32) -> Matrix {
    let n = psi.rows();
    let mut idx: Vec<usize> = (1..eigenvalues.len()).collect();
    let pow = |r: usize| eigenvalues[r].powi(t as i32);
    idx.sort_by(|&a, &b| pow(b).total_cmp(&pow(a)));
    Matrix::from_fn(n, idx.len(), |i, c| pow(idx[c]) * psi[(i, idx[c])])
}

#[derive(Serialize)]
struct Summary<'a> {
    n: usize,
    sigma: f64,
    params: &'a DiffusionParams,
    eigenvalues: &'a [f64],
    d_t: usize,
    converged: bool,
    residuals: &'a [f64],
    iterations: usize,
    matvecs: usize,
    timings: &'a Timings,
    compression: &'a Option<CompressionReport>,
}

impl DiffusionModel {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(Summary {
            n: self.psi.rows(),
            sigma: self.sigma,
            params: &self.params,
            eigenvalues: &self.eigenvalues,
            d_t: self.d_t,
            converged: self.converged,
            residuals: &self.residual_norms,
            iterations: self.iterations,
            matvecs: self.matvecs,
            timings: &self.timings,
            compression: &self.compression,
        })
        .expect("summary serializes")
    }

    /// Writes `<prefix>_eigenvalues.csv`, `<prefix>_eigenvectors.csv`,
    /// `<prefix>_coords.csv` and `<prefix>_summary.json`; returns the paths.
    pub fn export(&self, prefix: &Path) -> Result<Vec<PathBuf>> {
        let with = |suffix: &str| {
            let mut name = prefix.as_os_str().to_owned();
            name.push(suffix);
            PathBuf::from(name)
        };
        let values = with("_eigenvalues.csv");
        let vectors = with("_eigenvectors.csv");
        let coords = with("_coords.csv");
        let summary = with("_summary.json");
        let mut text = String::from("index,eigenvalue\n");
        for (i, v) in self.eigenvalues.iter().enumerate() {
            text.push_str(&format!("{i},{v:e}\n"));
        }
        write_file(&values, text.as_bytes())?;
        write_file(&vectors, matrix_csv(&self.psi, "psi").as_bytes())?;
        write_file(&coords, matrix_csv(&self.coords, "coord").as_bytes())?;
        let json = serde_json::to_string_pretty(&self.summary_json()).expect("json");
        write_file(&summary, json.as_bytes())?;
        Ok(vec![values, vectors, coords, summary])
    }
}

/// Header `<name>_0,<name>_1,...` then one row per matrix row.
pub fn matrix_csv(m: &Matrix, name: &str) -> String {
    let mut out = (0..m.cols())
        .map(|c| format!("{name}_{c}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|c| format!("{:e}", m[(i, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
