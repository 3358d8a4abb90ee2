//! Compiles and runs a small C program against the generated header and the
//! shared library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "hikedim.h"

int main(void) {
    HkdPointCloud *pc = NULL;
    if (hkd_pointcloud_uniform(512, 4, 3, &pc) != HKD_STATUS_OK) return 10;
    HkdHParams p = hkd_hparams_default();
    p.leaf_size_max = 128;
    p.neighbors = 8;
    HkdHMatrix *h = NULL;
    double err = -1.0;
    if (hkd_hmatrix_compress(pc, 0.0, &p, 0, &h, &err) != HKD_STATUS_OK) return 11;
    double x[512], y[512];
    for (int i = 0; i < 512; i++) x[i] = 1.0;
    if (hkd_hmatrix_matvec(h, x, y, 512) != HKD_STATUS_OK) return 12;
    if (!(y[0] >= 1.0)) return 13;
    if (hkd_hmatrix_matvec(h, x, y, 3) != HKD_STATUS_INVALID_ARGUMENT) return 14;
    if (hkd_pointcloud_scurve(1, 0.0, 0, NULL) != HKD_STATUS_INVALID_ARGUMENT) return 15;
    printf("%s %.3e\n", hkd_version(), err);
    hkd_hmatrix_free(h);
    hkd_pointcloud_free(pc);
    return 0;
}
"#;

fn lib_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = lib_dir();
    if !lib.join("libhikedim_ffi.so").exists() && !lib.join("libhikedim_ffi.dylib").exists() {
        panic!("shared library not found in {}", lib.display());
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .arg(format!("-L{}", lib.display()))
        .arg(format!("-Wl,-rpath,{}", lib.display()))
        .arg("-lhikedim_ffi")
        .arg("-lm")
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
}
