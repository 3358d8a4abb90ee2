//! Thread-scaling benchmark harness.
//!
//! Every measurement runs one discarded warm-up repetition followed by
//! `reps` timed ones inside a dedicated rayon pool; the median is reported.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dmaps::{diffusion_map, markov_eigs, Backend, DiffusionParams, SIGMA_SAMPLE};
use crate::error::{Error, Result};
use crate::hmatrix::{compress, HMatrix, HParams};
use crate::htree::tree_depth;
use crate::krylov::EigshOptions;
use crate::pointcloud::{generate_uniform, median_sigma, GaussianKernel, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchOp {
    Compress,
    /// One matvec with the compressed operator.
    Evaluate,
    Eigsh,
    Dmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// `sizes[i]` runs on `threads[i]`.
    Weak,
    /// The largest size on every thread count.
    Strong,
}

impl BenchOp {
    pub fn name(self) -> &'static str {
        match self {
            BenchOp::Compress => "compress",
            BenchOp::Evaluate => "evaluate",
            BenchOp::Eigsh => "eigsh",
            BenchOp::Dmap => "dmap",
        }
    }
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Weak => "weak",
            BenchMode::Strong => "strong",
        }
    }
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "compress" => Ok(BenchOp::Compress),
            "evaluate" | "matvec" => Ok(BenchOp::Evaluate),
            "eigsh" => Ok(BenchOp::Eigsh),
            "dmap" => Ok(BenchOp::Dmap),
            other => Err(Error::invalid(format!("unknown benchmark op '{other}'"))),
        }
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weak" => Ok(BenchMode::Weak),
            "strong" => Ok(BenchMode::Strong),
            other => Err(Error::invalid(format!("unknown benchmark mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub op: BenchOp,
    pub sizes: Vec<usize>,
    pub threads: Vec<usize>,
    pub reps: usize,
    /// Ambient dimension of the uniform clouds.
    pub dim: usize,
    pub seed: u64,
    pub sigma: Option<f64>,
    pub hmatrix: HParams,
    /// Eigenpairs for `eigsh` and `dmap`.
    pub k: usize,
    /// Overrides the available-memory probe, in bytes.
    pub memory_limit: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            mode: BenchMode::Strong,
            op: BenchOp::Evaluate,
            sizes: vec![16384],
            threads: vec![1, 2, 4, 8],
            reps: 3,
            dim: 6,
            seed: 0,
            sigma: None,
            hmatrix: HParams::default(),
            k: 5,
            memory_limit: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 reps, got {}",
                self.reps
            )));
        }
        if self.sizes.is_empty() || self.threads.is_empty() {
            return Err(Error::invalid("sizes and thread counts must be non-empty"));
        }
        if self.sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("sizes must be ascending"));
        }
        if self.sizes[0] < 2 {
            return Err(Error::invalid("sizes must be >= 2"));
        }
        if self.threads.contains(&0) {
            return Err(Error::invalid("thread counts must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if self.mode == BenchMode::Weak && self.sizes.len() != self.threads.len() {
            return Err(Error::invalid(format!(
                "weak scaling pairs sizes with thread counts, got {} sizes and {} thread counts",
                self.sizes.len(),
                self.threads.len()
            )));
        }
        self.hmatrix.validate()
    }

    /// `(n, threads)` pairs in run order.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        match self.mode {
            BenchMode::Weak => self
                .sizes
                .iter()
                .copied()
                .zip(self.threads.iter().copied())
                .collect(),
            BenchMode::Strong => {
                let n = *self.sizes.last().expect("validated");
                self.threads.iter().map(|&t| (n, t)).collect()
            }
        }
    }

    fn params_text(&self) -> String {
        let p = &self.hmatrix;
        let mut s = format!(
            "dim={};seed={};leaf={};rank={};tol={:e};neighbors={}",
            self.dim, self.seed, p.leaf_size_max, p.rank_max, p.tol, p.kappa
        );
        if let Some(sigma) = self.sigma {
            s.push_str(&format!(";sigma={sigma}"));
        }
        if matches!(self.op, BenchOp::Eigsh | BenchOp::Dmap) {
            s.push_str(&format!(";k={}", self.k));
        }
        s
    }
}

/// Timings of one `(n, threads)` cell.
#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub stored_scalars: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub op: BenchOp,
    pub mode: BenchMode,
    pub n: usize,
    pub threads: usize,
    pub reps: usize,
    pub median_seconds: Option<f64>,
    pub min_seconds: Option<f64>,
    pub max_seconds: Option<f64>,
    pub efficiency_pct: Option<f64>,
    pub stored_scalars: Option<usize>,
    /// `ok`, `warn: ...` or `error: ...`.
    pub status: String,
    pub params: String,
}

impl BenchRecord {
    pub fn is_error(&self) -> bool {
        self.status.starts_with("error")
    }
}

/// Rough peak bytes for one cell.
pub fn memory_estimate(op: BenchOp, n: usize, dim: usize, params: &HParams, k: usize) -> u64 {
    let n = n as u64;
    let leaf = (params.leaf_size_max as u64).min(n);
    let depth = tree_depth(n as usize, params.leaf_size_max) as u64;
    let rank = (params.rank_max as u64).min(leaf);
    let scalars = n * dim as u64
        + n * leaf
        + 2 * n * depth * rank
        + 3 * n * params.kappa as u64
        + match op {
            BenchOp::Compress | BenchOp::Evaluate => 4 * n,
            BenchOp::Eigsh | BenchOp::Dmap => n * (2 * k as u64 + 1).max(20) * 2,
        };
    8 * scalars
}

/// `MemAvailable` from `/proc/meminfo`, when readable.
pub fn available_memory() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

fn time_reps(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64, f64)> {
    f()?;
    let mut secs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        secs.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    secs.sort_by(f64::total_cmp);
    Ok((median(&secs), secs[0], secs[secs.len() - 1]))
}

fn workload(cfg: &BenchConfig, n: usize) -> Result<(PointCloud, f64)> {
    let pc = generate_uniform(n, cfg.dim, cfg.seed)?;
    let sigma = match cfg.sigma {
        Some(s) => s,
        None => median_sigma(&pc, SIGMA_SAMPLE, cfg.seed)?,
    };
    Ok((pc, sigma))
}

fn compressed(cfg: &BenchConfig, pc: &PointCloud, sigma: f64) -> Result<HMatrix> {
    let kernel = GaussianKernel::new(pc, sigma)?;
    Ok(compress(&kernel, &cfg.hmatrix, cfg.seed)?.0)
}

/// Times `cfg.op` at size `n` on a pool of `threads` workers.
pub fn measure(cfg: &BenchConfig, n: usize, threads: usize) -> Result<Measurement> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| {
        let (pc, sigma) = workload(cfg, n)?;
        match cfg.op {
            BenchOp::Compress => {
                let kernel = GaussianKernel::new(&pc, sigma)?;
                let mut stored = 0;
                let (med, min, max) = time_reps(cfg.reps, || {
                    let (h, _) = compress(&kernel, &cfg.hmatrix, cfg.seed)?;
                    stored = h.stored_scalars();
                    Ok(())
                })?;
                Ok(Measurement {
                    median: med,
                    min,
                    max,
                    stored_scalars: stored,
                })
            }
            BenchOp::Evaluate => {
                let h = compressed(cfg, &pc, sigma)?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (med, min, max) = time_reps(cfg.reps, || h.matvec(&x).map(drop))?;
                Ok(Measurement {
                    median: med,
                    min,
                    max,
                    stored_scalars: h.stored_scalars(),
                })
            }
            BenchOp::Eigsh => {
                let h = compressed(cfg, &pc, sigma)?;
                let opts = EigshOptions::new(cfg.k).seed(cfg.seed);
                let (med, min, max) =
                    time_reps(cfg.reps, || markov_eigs(&h, 1.0, &opts).map(drop))?;
                Ok(Measurement {
                    median: med,
                    min,
                    max,
                    stored_scalars: h.stored_scalars(),
                })
            }
            BenchOp::Dmap => {
                let params = DiffusionParams {
                    sigma: Some(sigma),
                    k: cfg.k,
                    backend: Backend::LanczosHmatrix,
                    hmatrix: cfg.hmatrix,
                    seed: cfg.seed,
                    ..DiffusionParams::default()
                };
                let mut stored = 0;
                let (med, min, max) = time_reps(cfg.reps, || {
                    let m = diffusion_map(&pc, &params)?;
                    stored = m.compression.map_or(0, |c| c.stored_scalars);
                    Ok(())
                })?;
                Ok(Measurement {
                    median: med,
                    min,
                    max,
                    stored_scalars: stored,
                })
            }
        }
    })
}

fn nlogn(n: usize) -> f64 {
    let n = n as f64;
    n * n.log2().max(1.0)
}

/// Parallel efficiency in percent against the first row.
///
/// Strong: `t_0 p_0 / (t p)`. Weak: the same with each time divided by the
/// `N log N` work of its size.
pub fn efficiency(mode: BenchMode, base: (usize, usize, f64), row: (usize, usize, f64)) -> f64 {
    let (n0, p0, t0) = base;
    let (n, p, t) = row;
    let work_ratio = match mode {
        BenchMode::Strong => 1.0,
        BenchMode::Weak => nlogn(n) / nlogn(n0),
    };
    100.0 * t0 * p0 as f64 * work_ratio / (t * p as f64)
}

/// Runs every cell, calling `on_row` as each finishes. Failing cells become
/// error rows and the run continues.
pub fn run_bench(
    cfg: &BenchConfig,
    mut on_row: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let params = cfg.params_text();
    let available = cfg.memory_limit.or_else(available_memory);
    let mut out = Vec::new();
    let mut base: Option<(usize, usize, f64)> = None;
    let mut prev: Option<f64> = None;
    for (n, threads) in cfg.runs() {
        let mut rec = BenchRecord {
            op: cfg.op,
            mode: cfg.mode,
            n,
            threads,
            reps: cfg.reps,
            median_seconds: None,
            min_seconds: None,
            max_seconds: None,
            efficiency_pct: None,
            stored_scalars: None,
            status: "ok".into(),
            params: params.clone(),
        };
        let need = memory_estimate(cfg.op, n, cfg.dim, &cfg.hmatrix, cfg.k);
        let result = match available {
            Some(avail) if need > avail => Err(format!(
                "insufficient memory: needs about {} MiB, {} MiB available",
                need >> 20,
                avail >> 20
            )),
            _ => measure(cfg, n, threads).map_err(|e| e.to_string()),
        };
        match result {
            Ok(m) => {
                rec.median_seconds = Some(m.median);
                rec.min_seconds = Some(m.min);
                rec.max_seconds = Some(m.max);
                rec.stored_scalars = Some(m.stored_scalars);
                let b = *base.get_or_insert((n, threads, m.median));
                rec.efficiency_pct = Some(efficiency(cfg.mode, b, (n, threads, m.median)));
                if cfg.mode == BenchMode::Strong && prev.is_some_and(|p| m.median > p) {
                    rec.status = "warn: slower than the previous thread count".into();
                }
                prev = Some(m.median);
            }
            Err(msg) => rec.status = format!("error: {msg}"),
        }
        on_row(&rec);
        out.push(rec);
    }
    Ok(out)
}

pub const CSV_HEADER: [&str; 12] = [
    "op",
    "mode",
    "n",
    "threads",
    "reps",
    "median_seconds",
    "min_seconds",
    "max_seconds",
    "efficiency_pct",
    "stored_scalars",
    "status",
    "params",
];

/// Writes the records as CSV with [`CSV_HEADER`]; missing values are empty.
pub fn write_csv<W: Write>(records: &[BenchRecord], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
    for r in records {
        out.write_record([
            r.op.name().to_string(),
            r.mode.name().to_string(),
            r.n.to_string(),
            r.threads.to_string(),
            r.reps.to_string(),
            opt(r.median_seconds),
            opt(r.min_seconds),
            opt(r.max_seconds),
            r.efficiency_pct
                .map(|e| format!("{e:.1}"))
                .unwrap_or_default(),
            r.stored_scalars.map(|s| s.to_string()).unwrap_or_default(),
            r.status.clone(),
            r.params.clone(),
        ])?;
    }
    out.flush()
}
