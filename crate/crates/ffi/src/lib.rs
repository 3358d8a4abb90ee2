//! C interface to `hikedim`.
//!
//! Objects are opaque handles created by `hkd_*_new`/`hkd_*_load`-style
//! functions and released with the matching `hkd_*_free`. Every fallible call
//! returns an [`HkdStatus`]; on failure `hkd_last_error_message` describes the
//! most recent error on the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use hikedim::dmaps::{self, Backend, DiffusionModel, DiffusionParams};
use hikedim::hmatrix::{self, HMatrix, HParams};
use hikedim::pointcloud::{self, GaussianKernel, PointCloud, PointFormat};
use hikedim::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkdStatus {
    Ok = 0,
    InvalidArgument = 1,
    Format = 2,
    Malformed = 3,
    DegenerateInput = 4,
    Data = 5,
    Numerical = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkdBackend {
    Dense = 0,
    LanczosDense = 1,
    LanczosHmatrix = 2,
}

/// Compression parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HkdHParams {
    pub leaf_size_max: usize,
    pub rank_max: usize,
    pub tol: f64,
    pub neighbors: usize,
    pub dense_limit: usize,
}

/// Diffusion-map parameters. `sigma <= 0` selects the automatic bandwidth.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HkdDiffusionParams {
    pub sigma: f64,
    pub alpha: f64,
    pub t: u32,
    pub k: usize,
    pub delta: f64,
    pub backend: HkdBackend,
    pub hmatrix: HkdHParams,
    pub eig_tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

/// Point cloud handle.
pub struct HkdPointCloud(PointCloud);

/// Compressed kernel handle.
pub struct HkdHMatrix(HMatrix);

/// Diffusion-map result handle.
pub struct HkdDiffusionModel(DiffusionModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(HkdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) => HkdStatus::InvalidArgument,
            Error::Format { .. } => HkdStatus::Format,
            Error::Malformed(_) => HkdStatus::Malformed,
            Error::DegenerateInput(_) => HkdStatus::DegenerateInput,
            Error::Data(_) => HkdStatus::Data,
            Error::Numerical(_) => HkdStatus::Numerical,
            Error::Io { .. } => HkdStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HkdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(HkdStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HkdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HkdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            HkdStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(invalid(format!(
            "output buffer holds {len} values, need {}",
            src.len()
        )));
    }
    slice::from_raw_parts_mut(dst, src.len()).copy_from_slice(src);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hkd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failure on this thread. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn hkd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn hkd_hparams_default() -> HkdHParams {
    HParams::default().into()
}

#[no_mangle]
pub extern "C" fn hkd_diffusion_params_default() -> HkdDiffusionParams {
    let d = DiffusionParams::default();
    HkdDiffusionParams {
        sigma: 0.0,
        alpha: d.alpha,
        t: d.t,
        k: d.k,
        delta: d.delta,
        backend: HkdBackend::LanczosHmatrix,
        hmatrix: d.hmatrix.into(),
        eig_tol: d.eig_tol,
        max_restarts: d.max_restarts,
        seed: d.seed,
    }
}

impl From<HParams> for HkdHParams {
    fn from(p: HParams) -> Self {
        HkdHParams {
            leaf_size_max: p.leaf_size_max,
            rank_max: p.rank_max,
            tol: p.tol,
            neighbors: p.kappa,
            dense_limit: p.dense_limit,
        }
    }
}

impl From<HkdHParams> for HParams {
    fn from(p: HkdHParams) -> Self {
        HParams {
            leaf_size_max: p.leaf_size_max,
            rank_max: p.rank_max,
            tol: p.tol,
            kappa: p.neighbors,
            dense_limit: p.dense_limit,
        }
    }
}

/// Copies `n * dim` row-major coordinates into a new cloud.
#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_new(
    data: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut HkdPointCloud,
) -> HkdStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| invalid("n * dim overflows"))?;
        let pc = PointCloud::new(slice::from_raw_parts(data, len).to_vec(), n, dim)?;
        put(out, HkdPointCloud(pc))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_scurve(
    n: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut HkdPointCloud,
) -> HkdStatus {
    guard(|| {
        put(
            out,
            HkdPointCloud(pointcloud::generate_scurve(n, noise, seed)?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_swiss_roll(
    n: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut HkdPointCloud,
) -> HkdStatus {
    guard(|| {
        put(
            out,
            HkdPointCloud(pointcloud::generate_swiss_roll(n, noise, seed)?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_uniform(
    n: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut HkdPointCloud,
) -> HkdStatus {
    guard(|| {
        put(
            out,
            HkdPointCloud(pointcloud::generate_uniform(n, dim, seed)?),
        )
    })
}

/// Loads CSV or raw-f64 points; the format follows the file extension.
#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_load(
    path: *const c_char,
    skip_header: c_int,
    out: *mut *mut HkdPointCloud,
) -> HkdStatus {
    guard(|| {
        let path = path_arg(path)?;
        let pc = pointcloud::load_points(&path, PointFormat::from_path(&path), skip_header != 0)?;
        put(out, HkdPointCloud(pc))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_save(
    pc: *const HkdPointCloud,
    path: *const c_char,
) -> HkdStatus {
    guard(|| {
        let pc = obj(pc, "point cloud")?;
        let path = path_arg(path)?;
        pointcloud::save_points(&pc.0, &path, PointFormat::from_path(&path))?;
        Ok(())
    })
}

/// Number of points, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_n(pc: *const HkdPointCloud) -> usize {
    pc.as_ref().map_or(0, |p| p.0.n())
}

#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_dim(pc: *const HkdPointCloud) -> usize {
    pc.as_ref().map_or(0, |p| p.0.dim())
}

/// Copies the row-major coordinates into `out` (at least `n * dim` values).
#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_data(
    pc: *const HkdPointCloud,
    out: *mut f64,
    len: usize,
) -> HkdStatus {
    guard(|| copy_out(obj(pc, "point cloud")?.0.as_slice(), out, len))
}

#[no_mangle]
pub unsafe extern "C" fn hkd_pointcloud_free(pc: *mut HkdPointCloud) {
    if !pc.is_null() {
        drop(Box::from_raw(pc));
    }
}

/// Median pairwise distance over a seeded subsample of `sample` points.
#[no_mangle]
pub unsafe extern "C" fn hkd_median_sigma(
    pc: *const HkdPointCloud,
    sample: usize,
    seed: u64,
    out: *mut f64,
) -> HkdStatus {
    guard(|| {
        let pc = obj(pc, "point cloud")?;
        if out.is_null() {
            return Err(null("output"));
        }
        *out = pointcloud::median_sigma(&pc.0, sample, seed)?;
        Ok(())
    })
}

/// Compresses the Gaussian kernel of `pc`. `sigma <= 0` picks the median
/// distance. `est_rel_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_compress(
    pc: *const HkdPointCloud,
    sigma: f64,
    params: *const HkdHParams,
    seed: u64,
    out: *mut *mut HkdHMatrix,
    est_rel_error: *mut f64,
) -> HkdStatus {
    guard(|| {
        let pc = &obj(pc, "point cloud")?.0;
        let params: HParams = match params.as_ref() {
            Some(p) => (*p).into(),
            None => HParams::default(),
        };
        let sigma = if sigma > 0.0 {
            sigma
        } else {
            pointcloud::median_sigma(pc, dmaps::SIGMA_SAMPLE, seed)?
        };
        let kernel = GaussianKernel::new(pc, sigma)?;
        let (mut h, report) = hmatrix::compress(&kernel, &params, seed)?;
        h.set_sigma(Some(sigma));
        if let Some(e) = est_rel_error.as_mut() {
            *e = report.est_rel_error;
        }
        put(out, HkdHMatrix(h))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_load(
    path: *const c_char,
    out: *mut *mut HkdHMatrix,
) -> HkdStatus {
    guard(|| {
        let path = path_arg(path)?;
        put(out, HkdHMatrix(hmatrix::load_hmatrix(&path)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_save(h: *const HkdHMatrix, path: *const c_char) -> HkdStatus {
    guard(|| {
        let h = obj(h, "hmatrix")?;
        hmatrix::save_hmatrix(&h.0, &path_arg(path)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_n(h: *const HkdHMatrix) -> usize {
    h.as_ref().map_or(0, |h| h.0.n())
}

#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_stored_scalars(h: *const HkdHMatrix) -> usize {
    h.as_ref().map_or(0, |h| h.0.stored_scalars())
}

/// `y = K x` for vectors of length `n`.
#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_matvec(
    h: *const HkdHMatrix,
    x: *const f64,
    y: *mut f64,
    n: usize,
) -> HkdStatus {
    hkd_hmatrix_matmat(h, x, y, n, 1)
}

/// `Y = K X` for column-major `n × m` blocks.
#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_matmat(
    h: *const HkdHMatrix,
    x: *const f64,
    y: *mut f64,
    n: usize,
    m: usize,
) -> HkdStatus {
    guard(|| {
        let h = obj(h, "hmatrix")?;
        if x.is_null() {
            return Err(null("input"));
        }
        if n != h.0.n() {
            return Err(invalid(format!(
                "vectors have length {n}, operator has {}",
                h.0.n()
            )));
        }
        let len = n.checked_mul(m).ok_or_else(|| invalid("n * m overflows"))?;
        let r = h.0.matmat(slice::from_raw_parts(x, len), m)?;
        copy_out(&r, y, len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_hmatrix_free(h: *mut HkdHMatrix) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs the diffusion-map pipeline. A run whose eigensolver did not converge
/// still returns `Ok`; check `hkd_model_converged`.
#[no_mangle]
pub unsafe extern "C" fn hkd_diffusion_map(
    pc: *const HkdPointCloud,
    params: *const HkdDiffusionParams,
    out: *mut *mut HkdDiffusionModel,
) -> HkdStatus {
    guard(|| {
        let pc = &obj(pc, "point cloud")?.0;
        let p = *obj(params, "parameters")?;
        let params = DiffusionParams {
            sigma: (p.sigma > 0.0).then_some(p.sigma),
            alpha: p.alpha,
            t: p.t,
            k: p.k,
            delta: p.delta,
            backend: match p.backend {
                HkdBackend::Dense => Backend::Dense,
                HkdBackend::LanczosDense => Backend::LanczosDense,
                HkdBackend::LanczosHmatrix => Backend::LanczosHmatrix,
            },
            hmatrix: p.hmatrix.into(),
            eig_tol: p.eig_tol,
            max_restarts: p.max_restarts,
            seed: p.seed,
        };
        put(out, HkdDiffusionModel(dmaps::diffusion_map(pc, &params)?))
    })
}

/// Points in the model, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn hkd_model_n(m: *const HkdDiffusionModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.psi.rows())
}

/// Eigenpairs held (may be fewer than requested without convergence).
#[no_mangle]
pub unsafe extern "C" fn hkd_model_k(m: *const HkdDiffusionModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.eigenvalues.len())
}

#[no_mangle]
pub unsafe extern "C" fn hkd_model_converged(m: *const HkdDiffusionModel) -> c_int {
    m.as_ref().map_or(0, |m| m.0.converged as c_int)
}

#[no_mangle]
pub unsafe extern "C" fn hkd_model_intrinsic_dimension(m: *const HkdDiffusionModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.d_t)
}

#[no_mangle]
pub unsafe extern "C" fn hkd_model_sigma(m: *const HkdDiffusionModel) -> f64 {
    m.as_ref().map_or(f64::NAN, |m| m.0.sigma)
}

/// Copies the `k` eigenvalues, descending.
#[no_mangle]
pub unsafe extern "C" fn hkd_model_eigenvalues(
    m: *const HkdDiffusionModel,
    out: *mut f64,
    len: usize,
) -> HkdStatus {
    guard(|| copy_out(&obj(m, "model")?.0.eigenvalues, out, len))
}

/// Copies the column-major `n × k` eigenvectors.
#[no_mangle]
pub unsafe extern "C" fn hkd_model_eigenvectors(
    m: *const HkdDiffusionModel,
    out: *mut f64,
    len: usize,
) -> HkdStatus {
    guard(|| copy_out(obj(m, "model")?.0.psi.as_slice(), out, len))
}

/// Copies the column-major `n × (k - 1)` embedding.
#[no_mangle]
pub unsafe extern "C" fn hkd_model_coords(
    m: *const HkdDiffusionModel,
    out: *mut f64,
    len: usize,
) -> HkdStatus {
    guard(|| copy_out(obj(m, "model")?.0.coords.as_slice(), out, len))
}

/// Writes the CSV and JSON exports next to `prefix`.
#[no_mangle]
pub unsafe extern "C" fn hkd_model_export(
    m: *const HkdDiffusionModel,
    prefix: *const c_char,
) -> HkdStatus {
    guard(|| {
        let m = obj(m, "model")?;
        m.0.export(&path_arg(prefix)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hkd_model_free(m: *mut HkdDiffusionModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_handles_are_reported() {
        let mut out = ptr::null_mut();
        let st = unsafe { hkd_pointcloud_new(ptr::null(), 2, 2, &mut out) };
        assert_eq!(st, HkdStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(hkd_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("data"));
        assert_eq!(unsafe { hkd_pointcloud_n(ptr::null()) }, 0);
        unsafe { hkd_pointcloud_free(ptr::null_mut()) };
    }

    #[test]
    fn errors_map_to_status() {
        let mut out = ptr::null_mut();
        let st = unsafe { hkd_pointcloud_scurve(1, 0.0, 0, &mut out) };
        assert_eq!(st, HkdStatus::InvalidArgument);
        assert!(out.is_null());
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(hkd_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn panics_are_caught() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, HkdStatus::Panic);
        let msg = unsafe { CStr::from_ptr(hkd_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }
}
