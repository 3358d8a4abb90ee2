//! Hierarchical compression of kernel matrices, a restarted Lanczos
//! eigensolver and diffusion maps built on both.

pub mod bench;
pub mod cli;
pub mod dense;
pub mod dmaps;
pub mod error;
pub mod hmatrix;
pub mod htree;
pub mod krylov;
pub mod linalg;
pub mod pointcloud;

pub use error::{Error, Result};
