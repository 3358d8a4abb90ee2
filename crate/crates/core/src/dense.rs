//! Dense eigensolvers backed by LAPACK, used as the brute-force reference.
//!
//! LAPACK is loaded at first use. OpenBLAS 0.3.20 picks broken kernels on
//! some AVX-512 CPUs, so unless `OPENBLAS_CORETYPE` is already set it is
//! pinned to a core matching the detected instruction set before loading.

use std::os::raw::c_char;
use std::sync::OnceLock;

use libloading::Library;

use crate::error::{Error, Result};

const LIBRARIES: &[&str] = &[
    "libopenblas.so.0",
    "libopenblas.so",
    "liblapack.so.3",
    "liblapack.so",
    "libopenblas.dylib",
    "liblapack.dylib",
];

type Dsyevr = unsafe extern "C" fn(
    *const c_char,
    *const c_char,
    *const c_char,
    *const i32,
    *mut f64,
    *const i32,
    *const f64,
    *const f64,
    *const i32,
    *const i32,
    *const f64,
    *mut i32,
    *mut f64,
    *mut f64,
    *const i32,
    *mut i32,
    *mut f64,
    *const i32,
    *mut i32,
    *const i32,
    *mut i32,
    usize,
    usize,
    usize,
);

type Dgeev = unsafe extern "C" fn(
    *const c_char,
    *const c_char,
    *const i32,
    *mut f64,
    *const i32,
    *mut f64,
    *mut f64,
    *mut f64,
    *const i32,
    *mut f64,
    *const i32,
    *mut f64,
    *const i32,
    *mut i32,
    usize,
    usize,
);

struct Lapack {
    _lib: Library,
    dsyevr: Dsyevr,
    dgeev: Dgeev,
}

fn pin_core_type() {
    if std::env::var_os("OPENBLAS_CORETYPE").is_some() {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    {
        let core = if std::is_x86_feature_detected!("avx512f") {
            Some("SkylakeX")
        } else if std::is_x86_feature_detected!("avx2") {
            Some("Haswell")
        } else {
            None
        };
        if let Some(core) = core {
            std::env::set_var("OPENBLAS_CORETYPE", core);
        }
    }
}

fn load() -> std::result::Result<Lapack, String> {
    pin_core_type();
    let mut last = String::from("no candidates");
    for name in LIBRARIES {
        // SAFETY: loading a system LAPACK runs only its own initializers.
        let lib = match unsafe { Library::new(name) } {
            Ok(lib) => lib,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        // SAFETY: the symbol types match the reference LAPACK interface,
        // including the trailing hidden string lengths.
        let syms = unsafe {
            let dsyevr = lib.get::<Dsyevr>(b"dsyevr_\0").map(|s| *s);
            let dgeev = lib.get::<Dgeev>(b"dgeev_\0").map(|s| *s);
            dsyevr.and_then(|a| dgeev.map(|b| (a, b)))
        };
        match syms {
            Ok((dsyevr, dgeev)) => {
                return Ok(Lapack {
                    _lib: lib,
                    dsyevr,
                    dgeev,
                })
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(format!("no usable LAPACK library found ({last})"))
}

fn lapack() -> Result<&'static Lapack> {
    static LAPACK: OnceLock<std::result::Result<Lapack, String>> = OnceLock::new();
    LAPACK
        .get_or_init(load)
        .as_ref()
        .map_err(|e| Error::Numerical(e.clone()))
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// n × values.len(), column-major.
    pub vectors: Vec<f64>,
}

fn check_square(a: &[f64], n: usize) -> Result<()> {
    if n == 0 || a.len() != n * n {
        return Err(Error::invalid(format!(
            "expected a non-empty {n}x{n} matrix, got {} entries",
            a.len()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite matrix entry".into()));
    }
    Ok(())
}

fn lapack_int(v: usize) -> Result<i32> {
    i32::try_from(v).map_err(|_| Error::invalid(format!("dimension {v} exceeds LAPACK range")))
}

/// Eigenpairs with ascending indices `lo..hi` (0-based) of the symmetric
/// column-major matrix `a`; only the lower triangle is referenced.
pub fn sym_eig_range(a: &[f64], n: usize, lo: usize, hi: usize) -> Result<SymEigen> {
    check_square(a, n)?;
    if lo >= hi || hi > n {
        return Err(Error::invalid(format!(
            "bad eigenvalue index range {lo}..{hi} for n={n}"
        )));
    }
    let lp = lapack()?;
    let mut work_a = a.to_vec();
    let nn = lapack_int(n)?;
    let il = lapack_int(lo + 1)?;
    let iu = lapack_int(hi)?;
    let count = hi - lo;
    let mut m = 0i32;
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n * count];
    let mut isuppz = vec![0i32; 2 * count.max(1)];
    let mut work = vec![0.0; 1];
    let mut iwork = vec![0i32; 1];
    let mut info = 0i32;
    let (vl, vu, abstol) = (0.0, 0.0, 0.0);
    for query in [true, false] {
        let (lwork, liwork) = if query {
            (-1, -1)
        } else {
            (work.len() as i32, iwork.len() as i32)
        };
        // SAFETY: every buffer is sized per the dsyevr contract for the given
        // n, index range and workspace lengths.
        unsafe {
            (lp.dsyevr)(
                b"V".as_ptr() as *const c_char,
                b"I".as_ptr() as *const c_char,
                b"L".as_ptr() as *const c_char,
                &nn,
                work_a.as_mut_ptr(),
                &nn,
                &vl,
                &vu,
                &il,
                &iu,
                &abstol,
                &mut m,
                w.as_mut_ptr(),
                z.as_mut_ptr(),
                &nn,
                isuppz.as_mut_ptr(),
                work.as_mut_ptr(),
                &lwork,
                iwork.as_mut_ptr(),
                &liwork,
                &mut info,
                1,
                1,
                1,
            );
        }
        if info != 0 {
            return Err(Error::Numerical(format!("dsyevr failed with info={info}")));
        }
        if query {
            work = vec![0.0; work[0] as usize];
            iwork = vec![0; iwork[0] as usize];
        }
    }
    let m = m as usize;
    w.truncate(m);
    z.truncate(n * m);
    Ok(SymEigen {
        values: w,
        vectors: z,
    })
}

/// Full eigendecomposition of a symmetric matrix.
pub fn sym_eig(a: &[f64], n: usize) -> Result<SymEigen> {
    sym_eig_range(a, n, 0, n)
}

/// The `k` algebraically largest eigenpairs, returned in descending order.
pub fn sym_eig_largest(a: &[f64], n: usize, k: usize) -> Result<SymEigen> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= n, got k={k} n={n}")));
    }
    let mut e = sym_eig_range(a, n, n - k, n)?;
    let mut order: Vec<usize> = (0..e.values.len()).collect();
    order.reverse();
    let values = order.iter().map(|&i| e.values[i]).collect();
    let vectors = order
        .iter()
        .flat_map(|&i| e.vectors[i * n..(i + 1) * n].iter().copied())
        .collect();
    e.values = values;
    e.vectors = vectors;
    Ok(e)
}

/// Eigenvalues `(re, im)` of a general column-major matrix.
pub fn general_eigvals(a: &[f64], n: usize) -> Result<Vec<(f64, f64)>> {
    check_square(a, n)?;
    let lp = lapack()?;
    let mut work_a = a.to_vec();
    let nn = lapack_int(n)?;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut dummy = [0.0f64; 1];
    let one = 1i32;
    let mut work = vec![0.0; 1];
    let mut info = 0i32;
    for query in [true, false] {
        let lwork = if query { -1 } else { work.len() as i32 };
        // SAFETY: no eigenvectors requested, so vl/vr are 1x1 dummies with ld=1.
        unsafe {
            (lp.dgeev)(
                b"N".as_ptr() as *const c_char,
                b"N".as_ptr() as *const c_char,
                &nn,
                work_a.as_mut_ptr(),
                &nn,
                wr.as_mut_ptr(),
                wi.as_mut_ptr(),
                dummy.as_mut_ptr(),
                &one,
                dummy.as_mut_ptr(),
                &one,
                work.as_mut_ptr(),
                &lwork,
                &mut info,
                1,
                1,
            );
        }
        if info != 0 {
            return Err(Error::Numerical(format!("dgeev failed with info={info}")));
        }
        if query {
            work = vec![0.0; work[0] as usize];
        }
    }
    Ok(wr.into_iter().zip(wi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_spectrum() {
        let n = 6;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = (i + 1) as f64;
        }
        let e = sym_eig(&a, n).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let top = sym_eig_largest(&a, n, 2).unwrap();
        assert_eq!(top.values, vec![6.0, 5.0]);
        assert!((top.vectors[5].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_has_complex_pair() {
        let a = [0.0, 1.0, -1.0, 0.0];
        let mut ev = general_eigvals(&a, 2).unwrap();
        ev.sort_by(|x, y| x.1.total_cmp(&y.1));
        assert!((ev[0].1 + 1.0).abs() < 1e-15 && (ev[1].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(sym_eig(&[1.0, 2.0], 2).is_err());
        assert!(sym_eig(&[f64::NAN], 1).is_err());
        assert!(sym_eig_largest(&[1.0], 1, 2).is_err());
    }
}
