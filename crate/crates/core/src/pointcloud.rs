//! Point clouds, synthetic manifold generators and Gaussian kernels.
//!
//! Coordinates are stored row-major: point `i` occupies
//! `data[i * dim..(i + 1) * dim]`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Magic bytes of the raw-f64 point format.
pub const RAW_MAGIC: &[u8; 4] = b"HKD1";

/// Default size above which kernels are only ever evaluated entry-wise.
pub const DEFAULT_DENSE_LIMIT: usize = 8192;

// Independent streams so that adding noise never shifts the manifold samples.
const NOISE_STREAM: u64 = 0x6e_6f69_7365;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl PointCloud {
    /// Wraps row-major coordinates. All values must be finite.
    pub fn new(data: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "point cloud needs n >= 1 and dim >= 1, got n={n} dim={dim}"
            )));
        }
        if data.len() != n * dim {
            return Err(Error::invalid(format!(
                "expected {} coordinates for {n}x{dim}, got {}",
                n * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite coordinate in point {} (dimension {})",
                pos / dim,
                pos % dim
            )));
        }
        Ok(PointCloud { data, n, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::invalid(format!(
                "ragged rows: row {} has {} columns, expected {dim}",
                bad,
                rows[bad].len()
            )));
        }
        Self::new(rows.concat(), rows.len(), dim)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.sq_dist(i, j).sqrt()
    }

    /// Applies `f` to every point, producing a cloud of the same shape.
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<PointCloud> {
        let mut out = vec![0.0; self.data.len()];
        for (src, dst) in self
            .data
            .chunks_exact(self.dim)
            .zip(out.chunks_exact_mut(self.dim))
        {
            f(src, dst);
        }
        PointCloud::new(out, self.n, self.dim)
    }
}

fn check_generator_args(n: usize, noise: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 points, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!(
            "noise must be finite and >= 0, got {noise}"
        )));
    }
    Ok(())
}

fn add_noise(data: &mut [f64], noise: f64, seed: u64) {
    if noise == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
    let normal = Normal::new(0.0, noise).expect("noise is validated");
    for v in data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}

/// Samples the 3-D S-curve `(sin u, v, sign(u)(cos u - 1))` with
/// `u ~ U[-3π/2, 3π/2]`, `v ~ U[0, 2]`.
pub fn generate_scurve(n: usize, noise: f64, seed: u64) -> Result<PointCloud> {
    check_generator_args(n, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let u = 3.0 * PI * (rng.gen::<f64>() - 0.5);
        let v = 2.0 * rng.gen::<f64>();
        data.extend_from_slice(&[u.sin(), v, u.signum() * (u.cos() - 1.0)]);
    }
    add_noise(&mut data, noise, seed);
    PointCloud::new(data, n, 3)
}

/// Samples the swiss roll `(t cos t, h, t sin t)` with
/// `t ~ U[1.5π, 4.5π]`, `h ~ U[0, 21]`.
pub fn generate_swiss_roll(n: usize, noise: f64, seed: u64) -> Result<PointCloud> {
    check_generator_args(n, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let t = 1.5 * PI * (1.0 + 2.0 * rng.gen::<f64>());
        let h = 21.0 * rng.gen::<f64>();
        data.extend_from_slice(&[t * t.cos(), h, t * t.sin()]);
    }
    add_noise(&mut data, noise, seed);
    PointCloud::new(data, n, 3)
}

/// `n` i.i.d. points uniform in the unit cube `[0, 1)^dim`.
pub fn generate_uniform(n: usize, dim: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 || dim == 0 {
        return Err(Error::invalid(format!(
            "need n >= 1 and dim >= 1, got n={n} dim={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.gen::<f64>()).collect();
    PointCloud::new(data, n, dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Csv,
    RawF64,
}

impl PointFormat {
    /// `.bin`, `.raw`, `.f64` and `.hkd` select raw-f64, anything else CSV.
    pub fn from_path(path: &Path) -> PointFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin" | "raw" | "f64" | "hkd") => PointFormat::RawF64,
            _ => PointFormat::Csv,
        }
    }
}

impl std::str::FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(PointFormat::Csv),
            "raw" | "raw-f64" | "bin" => Ok(PointFormat::RawF64),
            other => Err(Error::invalid(format!("unknown point format '{other}'"))),
        }
    }
}

pub fn load_points(path: &Path, format: PointFormat, skip_header: bool) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        PointFormat::Csv => read_csv(reader, skip_header),
        PointFormat::RawF64 => read_raw(reader).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        }),
    }
}

pub fn save_points(pc: &PointCloud, path: &Path, format: PointFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        PointFormat::Csv => write_csv(pc, &mut w),
        PointFormat::RawF64 => write_raw(pc, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_csv<R: Read>(reader: R, skip_header: bool) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut dim = None;
    let mut n = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Format {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match dim {
            None => dim = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(Error::invalid(format!(
                    "ragged rows: line {line} has {} columns, expected {d}",
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Format {
                line,
                msg: format!("cannot parse '{field}' as a number"),
            })?;
            data.push(v);
        }
        n += 1;
    }
    let dim = dim.ok_or_else(|| Error::invalid("no points in input"))?;
    PointCloud::new(data, n, dim)
}

pub fn write_csv<W: Write>(pc: &PointCloud, w: &mut W) -> std::io::Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(w);
    for i in 0..pc.n() {
        wtr.write_record(pc.point(i).iter().map(|v| v.to_string()))?;
    }
    wtr.flush()
}

pub fn read_raw<R: Read>(mut reader: R) -> Result<PointCloud> {
    let mut header = [0u8; 20];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::Malformed("raw-f64 header truncated".into()))?;
    if &header[..4] != RAW_MAGIC {
        return Err(Error::Malformed("bad magic, expected HKD1".into()));
    }
    let n = u64::from_le_bytes(header[4..12].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let count = n
        .checked_mul(dim)
        .ok_or_else(|| Error::Malformed("raw-f64 size overflows".into()))?;
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<raw-f64 stream>", e))?;
    if bytes.len() != count * 8 {
        return Err(Error::Malformed(format!(
            "raw-f64 payload holds {} bytes, expected {}",
            bytes.len(),
            count * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PointCloud::new(data, n, dim)
}

pub fn write_raw<W: Write>(pc: &PointCloud, w: &mut W) -> std::io::Result<()> {
    w.write_all(RAW_MAGIC)?;
    w.write_all(&(pc.n() as u64).to_le_bytes())?;
    w.write_all(&(pc.dim() as u64).to_le_bytes())?;
    for v in pc.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Symmetric matrix given entry-wise. Entries must be pure functions of `(i, j)`.
pub trait KernelMatrix: Sync {
    fn size(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> f64;
}

impl<K: KernelMatrix + ?Sized> KernelMatrix for &K {
    fn size(&self) -> usize {
        (**self).size()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        (**self).entry(i, j)
    }
}

/// Kernel backed by a closure.
pub struct FnKernel<F> {
    n: usize,
    f: F,
}

impl<F: Fn(usize, usize) -> f64 + Sync> FnKernel<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnKernel { n, f }
    }
}

impl<F: Fn(usize, usize) -> f64 + Sync> KernelMatrix for FnKernel<F> {
    fn size(&self) -> usize {
        self.n
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        (self.f)(i, j)
    }
}

/// Lazily evaluated Gaussian kernel `exp(-|x_i - x_j|^2 / sigma^2)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKernel<'a> {
    points: &'a PointCloud,
    sigma: f64,
    inv_sigma_sq: f64,
}

impl<'a> GaussianKernel<'a> {
    pub fn new(points: &'a PointCloud, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be finite and > 0, got {sigma}"
            )));
        }
        Ok(GaussianKernel {
            points,
            sigma,
            inv_sigma_sq: 1.0 / (sigma * sigma),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn points(&self) -> &'a PointCloud {
        self.points
    }
}

impl KernelMatrix for GaussianKernel<'_> {
    fn size(&self) -> usize {
        self.points.n()
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        (-self.points.sq_dist(i, j) * self.inv_sigma_sq).exp()
    }
}

/// Fully materialized kernel matrix, column-major (equal to row-major by symmetry).
#[derive(Debug, Clone)]
pub struct DenseKernel {
    n: usize,
    sigma: f64,
    entries: Vec<f64>,
}

impl DenseKernel {
    /// Materializes any symmetric kernel: the lower triangle is evaluated once and mirrored.
    pub fn from_kernel<K: KernelMatrix>(kernel: &K, sigma: f64) -> Result<Self> {
        let n = kernel.size();
        let mut entries = vec![0.0; n * n];
        entries.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate().skip(j) {
                *v = kernel.entry(i, j);
            }
        });
        for j in 0..n {
            for i in (j + 1)..n {
                entries[i * n + j] = entries[j * n + i];
            }
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite kernel entry".into()));
        }
        Ok(DenseKernel { n, sigma, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[j * self.n + i]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.entries[j * self.n..(j + 1) * self.n]
    }
}

impl KernelMatrix for DenseKernel {
    fn size(&self) -> usize {
        self.n
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

/// Dense Gaussian kernel `W_ij = exp(-|x_i - x_j|^2 / sigma^2)`.
pub fn gaussian_kernel(pc: &PointCloud, sigma: f64) -> Result<DenseKernel> {
    let k = GaussianKernel::new(pc, sigma)?;
    DenseKernel::from_kernel(&k, sigma)
}

/// Median pairwise Euclidean distance over a seeded subsample of `sample` points.
///
/// When `sample >= n` the whole cloud is used in file order. If more than half
/// of the pairs coincide the median of the nonzero distances is returned so the
/// bandwidth stays positive.
pub fn median_sigma(pc: &PointCloud, sample: usize, seed: u64) -> Result<f64> {
    if sample < 2 {
        return Err(Error::invalid(format!("sample must be >= 2, got {sample}")));
    }
    let n = pc.n();
    if n < 2 {
        return Err(Error::DegenerateInput("need at least two points".into()));
    }
    let idx: Vec<usize> = if sample >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = index::sample(&mut rng, n, sample).into_vec();
        v.sort_unstable();
        v
    };
    let mut dists: Vec<f64> = (0..idx.len())
        .into_par_iter()
        .flat_map_iter(|a| {
            let idx = &idx;
            ((a + 1)..idx.len()).map(move |b| pc.dist(idx[a], idx[b]))
        })
        .collect();
    dists.sort_unstable_by(f64::total_cmp);
    let med = median_sorted(&dists);
    if med > 0.0 {
        return Ok(med);
    }
    let first_pos = dists.partition_point(|&d| d <= 0.0);
    if first_pos == dists.len() {
        return Err(Error::DegenerateInput(
            "all sampled points are identical".into(),
        ));
    }
    Ok(median_sorted(&dists[first_pos..]))
}

fn median_sorted(v: &[f64]) -> f64 {
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}
