//! Implicitly restarted Arnoldi/Lanczos eigensolver over abstract operators.

mod arnoldi;
mod eigsh;
mod restart;
mod tridiag;

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

pub use arnoldi::{arnoldi_factorization, ArnoldiFactorization, BREAKDOWN_TOL, DGKS_RATIO};
pub use eigsh::{eigsh, EigResult, EigshOptions, Which};
pub use restart::implicit_restart;
pub use tridiag::{symmetric_eigen, tridiagonal_eigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pointcloud::DenseKernel;

/// A square linear operator known only through its action on vectors.
pub trait LinearOp: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`. Both slices have length `dim()`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn is_symmetric(&self) -> bool {
        true
    }
}

impl<T: LinearOp + ?Sized> LinearOp for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }

    fn is_symmetric(&self) -> bool {
        (**self).is_symmetric()
    }
}

/// Dense column-major matrix wrapped as an operator.
#[derive(Debug, Clone)]
pub struct DenseOp {
    n: usize,
    data: Vec<f64>,
    symmetric: bool,
}

impl DenseOp {
    /// The symmetry flag is set when the matrix is exactly symmetric.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n || n == 0 {
            return Err(Error::invalid(format!(
                "expected {n}x{n} entries, got {}",
                data.len()
            )));
        }
        let symmetric = (0..n).all(|j| (0..j).all(|i| data[j * n + i] == data[i * n + j]));
        Ok(DenseOp { n, data, symmetric })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        DenseOp {
            n,
            data,
            symmetric: true,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> DenseOp {
        DenseOp {
            n: self.n,
            data: self.data.iter().map(|v| c * v).collect(),
            symmetric: self.symmetric,
        }
    }
}

fn symmetric_dense_apply(n: usize, data: &[f64], x: &[f64], y: &mut [f64]) {
    // column i equals row i
    y.par_iter_mut()
        .enumerate()
        .for_each(|(i, yi)| *yi = linalg::dot(&data[i * n..(i + 1) * n], x));
}

impl LinearOp for DenseOp {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        if self.symmetric {
            symmetric_dense_apply(self.n, &self.data, x, y);
        } else {
            y.fill(0.0);
            for (j, xj) in x.iter().enumerate() {
                linalg::axpy(*xj, &self.data[j * self.n..(j + 1) * self.n], y);
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

impl LinearOp for DenseKernel {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        symmetric_dense_apply(self.n(), self.entries(), x, y);
    }
}

/// Counts applications of the wrapped operator.
pub struct CountingOp<O> {
    inner: O,
    count: AtomicUsize,
}

impl<O: LinearOp> CountingOp<O> {
    pub fn new(inner: O) -> Self {
        CountingOp {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<O: LinearOp> LinearOp for CountingOp<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x, y)
    }

    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
}
