use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::htree::EuclideanDistance;
use crate::pointcloud::{generate_uniform, median_sigma, FnKernel, GaussianKernel};

fn small(leaf: usize) -> HParams {
    HParams {
        leaf_size_max: leaf,
        kappa: 8,
        ..HParams::default()
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gaussian_cloud(n: usize, dim: usize, seed: u64) -> (PointCloud, f64) {
    let pc = generate_uniform(n, dim, seed).unwrap();
    let sigma = median_sigma(&pc, 1000, seed).unwrap();
    (pc, sigma)
}

use crate::pointcloud::PointCloud;

fn dense_of<K: KernelMatrix>(k: &K) -> Vec<f64> {
    let n = k.size();
    let mut d = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            d[j * n + i] = k.entry(i, j);
        }
    }
    d
}

fn dense_apply(d: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| (0..n).map(|j| d[j * n + i] * x[j]).sum())
        .collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn identity_is_exact() {
    let k = FnKernel::new(300, |i, j| if i == j { 1.0 } else { 0.0 });
    let (h, rep) = compress(&k, &small(40), 0).unwrap();
    assert_eq!(h.near_field().nnz(), 0);
    assert!(rep.achieved_ranks.iter().flatten().all(|&r| r == 0));
    assert_eq!(rep.est_rel_error, 0.0);
    for leaf in h.tree().leaves() {
        let m = h.tree().node(leaf).len();
        let d = h.diag_block(leaf).unwrap();
        for j in 0..m {
            for i in 0..m {
                assert_eq!(d[j * m + i], if i == j { 1.0 } else { 0.0 });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_vec(300, &mut rng);
    assert_eq!(h.matvec(&x).unwrap(), x);
    assert_eq!(h.matvec(&vec![0.0; 300]).unwrap(), vec![0.0; 300]);
}

#[test]
fn rank_one_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f64> = (0..500).map(|_| rng.gen_range(0.5..1.5)).collect();
    let k = FnKernel::new(500, |i, j| v[i] * v[j]);
    let (h, rep) = compress(&k, &small(50), 3).unwrap();
    assert!(rep.achieved_ranks.iter().flatten().all(|&r| r == 1));
    for _ in 0..10_000 {
        let (i, j) = (rng.gen_range(0..500), rng.gen_range(0..500));
        assert!((h.entry(i, j) - v[i] * v[j]).abs() < 1e-12);
    }
}

#[test]
fn single_leaf_is_dense() {
    let (pc, sigma) = gaussian_cloud(200, 3, 4);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let (h, rep) = compress(&k, &HParams::default(), 0).unwrap();
    assert_eq!(h.tree().nodes().len(), 1);
    assert_eq!(rep.est_rel_error, 0.0);
    assert_eq!(h.to_dense(), dense_of(&k));
}

#[test]
fn matvec_matches_dense_gaussian() {
    let (pc, sigma) = gaussian_cloud(1024, 6, 5);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let params = HParams::default();
    let (h, _) = compress(&k, &params, 0).unwrap();
    let d = dense_of(&k);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let mut x = random_vec(1024, &mut rng);
        let nx = linalg::norm2(&x);
        linalg::scale(1.0 / nx, &mut x);
        let e = rel(&h.matvec(&x).unwrap(), &dense_apply(&d, &x));
        assert!(e <= 10.0 * params.tol, "relative matvec error {e}");
    }
}

#[test]
fn matmat_is_bitwise_looped_matvec() {
    let (pc, sigma) = gaussian_cloud(700, 4, 7);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let (h, _) = compress(&k, &small(64), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = 7;
    let x = random_vec(700 * m, &mut rng);
    let y = h.matmat(&x, m).unwrap();
    for c in 0..m {
        let yc = h.matvec(&x[c * 700..(c + 1) * 700]).unwrap();
        for (a, b) in yc.iter().zip(&y[c * 700..(c + 1) * 700]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn identity_matmat_reconstructs() {
    let (pc, sigma) = gaussian_cloud(256, 6, 9);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let params = small(32);
    let (h, _) = compress(&k, &params, 2).unwrap();
    let mut eye = vec![0.0; 256 * 256];
    for i in 0..256 {
        eye[i * 256 + i] = 1.0;
    }
    let full = h.matmat(&eye, 256).unwrap();
    assert!(rel(&full, &dense_of(&k)) <= 10.0 * params.tol);
    let td = h.to_dense();
    for (a, b) in full.iter().zip(&td) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn exhaustive_estimate_equals_dense_ratio() {
    let (pc, sigma) = gaussian_cloud(512, 6, 10);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let params = HParams {
        tol: 1e-2,
        ..small(64)
    };
    let (h, _) = compress(&k, &params, 0).unwrap();
    let est = estimate_rel_error(&h, &k, 512 * 512, 0).unwrap();
    let exact = rel(&h.to_dense(), &dense_of(&k));
    assert!(est > 0.0);
    assert!(
        (est - exact).abs() <= 1e-15 + 1e-12 * exact,
        "{est} vs {exact}"
    );
    let a = estimate_rel_error(&h, &k, 10_000, 1).unwrap();
    let b = estimate_rel_error(&h, &k, 10_000, 2).unwrap();
    assert!((a - b).abs() < 0.5 * a.max(b));
    assert!(estimate_rel_error(&h, &k, 0, 0).is_err());
}

#[test]
fn operator_is_symmetric_and_linear() {
    let (pc, sigma) = gaussian_cloud(600, 5, 11);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let (h, _) = compress(&k, &small(48), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_vec(600, &mut rng);
    let y = random_vec(600, &mut rng);
    let (hx, hy) = (h.matvec(&x).unwrap(), h.matvec(&y).unwrap());
    let asym = (linalg::dot(&x, &hy) - linalg::dot(&y, &hx)).abs();
    assert!(asym <= 1e-10 * linalg::norm2(&x) * linalg::norm2(&y));
    let (alpha, beta) = (0.7, -1.3);
    let comb: Vec<f64> = x
        .iter()
        .zip(&y)
        .map(|(a, b)| alpha * a + beta * b)
        .collect();
    let lhs = h.matvec(&comb).unwrap();
    let rhs: Vec<f64> = hx
        .iter()
        .zip(&hy)
        .map(|(a, b)| alpha * a + beta * b)
        .collect();
    assert!(rel(&lhs, &rhs) < 1e-12);
}

#[test]
fn permuted_accessor_with_permuted_tree() {
    let (pc, sigma) = gaussian_cloud(400, 3, 13);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let params = small(40);
    let tree = build_tree(&KernelDistance(&k), 400, 40, 0).unwrap();
    let (h, _) = compress_with_tree(&k, tree.clone(), &params, 0).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut p: Vec<usize> = (0..400).collect();
    for i in (1..400).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    let kp = FnKernel::new(400, |i, j| k.entry(p[i], p[j]));
    let mut inv = vec![0; 400];
    for (i, &pi) in p.iter().enumerate() {
        inv[pi] = i;
    }
    let order: Vec<usize> = tree.order().iter().map(|&o| inv[o]).collect();
    let ptree = ClusterTree::from_parts(order, tree.nodes().to_vec(), 40).unwrap();
    let (hp, _) = compress_with_tree(&kp, ptree, &params, 0).unwrap();

    let x = random_vec(400, &mut rng);
    let xp: Vec<f64> = (0..400).map(|i| x[p[i]]).collect();
    let y = h.matvec(&x).unwrap();
    let yp = hp.matvec(&xp).unwrap();
    for i in 0..400 {
        assert!((yp[i] - y[p[i]]).abs() <= 1e-12 * y[p[i]].abs().max(1.0));
    }
}

#[test]
fn storage_and_touches() {
    let (pc, sigma) = gaussian_cloud(2048, 3, 15);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let params = HParams {
        leaf_size_max: 128,
        rank_max: 64,
        ..HParams::default()
    };
    let (h, rep) = compress(&k, &params, 0).unwrap();
    assert_eq!(rep.stored_scalars, h.stored_scalars());
    assert!(rep.max_rank() <= 64);
    let n = 2048f64;
    let depth = h.tree().depth() as f64;
    let bound = n * (128.0 + 2.0 * 64.0 + 64.0 * 2.0 * depth);
    assert!((h.stored_scalars() as f64) <= bound);
    assert!((h.matvec_touches() as f64) <= 4.0 * bound);
    let hist = rep.rank_histogram(0);
    assert_eq!(hist.iter().map(|(_, c)| c).sum::<usize>(), 1);
}

#[test]
fn roundtrip_is_bit_exact() {
    let (pc, sigma) = gaussian_cloud(300, 3, 16);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let (mut h, _) = compress(&k, &small(32), 0).unwrap();
    h.set_sigma(Some(sigma));
    let mut buf = Vec::new();
    write_hmatrix(&h, &mut buf).unwrap();
    let back = read_hmatrix(buf.as_slice()).unwrap();
    assert_eq!(back, h);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_vec(300, &mut rng);
    let (a, b) = (h.matvec(&x).unwrap(), back.matvec(&x).unwrap());
    assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));

    assert!(matches!(
        read_hmatrix(&buf[..buf.len() - 3]),
        Err(Error::Malformed(_))
    ));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(
        read_hmatrix(bad.as_slice()),
        Err(Error::Malformed(_))
    ));
    let mut long = buf.clone();
    long.push(0);
    assert!(matches!(
        read_hmatrix(long.as_slice()),
        Err(Error::Malformed(_))
    ));
}

#[test]
fn argument_errors() {
    let k = FnKernel::new(50, |i, j| if i == j { 1.0 } else { 0.0 });
    for bad in [
        HParams {
            rank_max: 0,
            ..small(8)
        },
        HParams {
            tol: 0.0,
            ..small(8)
        },
        HParams {
            tol: 1.0,
            ..small(8)
        },
        HParams {
            leaf_size_max: 0,
            ..small(8)
        },
    ] {
        assert!(matches!(
            compress(&k, &bad, 0),
            Err(Error::InvalidArgument(_))
        ));
    }
    let (h, _) = compress(&k, &small(8), 0).unwrap();
    assert!(h.matvec(&[1.0; 49]).is_err());
    assert!(h.matmat(&[1.0; 100], 3).is_err());
    assert!(h.matmat(&[], 0).is_err());
    let nan = FnKernel::new(50, |i, j| {
        if i == 3 && j == 40 || i == 40 && j == 3 {
            f64::NAN
        } else {
            0.5
        }
    });
    assert!(matches!(compress(&nan, &small(8), 0), Err(Error::Data(_))));
}

#[test]
fn tree_from_points_is_accepted() {
    let (pc, sigma) = gaussian_cloud(300, 2, 17);
    let k = GaussianKernel::new(&pc, sigma).unwrap();
    let tree = build_tree(&EuclideanDistance(&pc), 300, 30, 0).unwrap();
    let (h, rep) = compress_with_tree(&k, tree, &small(30), 0).unwrap();
    assert!(rep.est_rel_error < 1e-2);
    assert_eq!(h.n(), 300);
    let other = build_tree(&EuclideanDistance(&pc), 299, 30, 0);
    assert!(compress_with_tree(&k, other.unwrap(), &small(30), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn compressed_operator_is_symmetric(n in 40usize..160, leaf in 8usize..40, seed in 0u64..1000) {
        let (pc, sigma) = gaussian_cloud(n, 3, seed);
        let k = GaussianKernel::new(&pc, sigma).unwrap();
        let (h, _) = compress(&k, &small(leaf), seed).unwrap();
        let d = h.to_dense();
        for i in 0..n {
            for j in 0..i {
                prop_assert_eq!(d[j * n + i].to_bits(), d[i * n + j].to_bits());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vec(n, &mut rng);
        let y = random_vec(n, &mut rng);
        let (hx, hy) = (h.matvec(&x).unwrap(), h.matvec(&y).unwrap());
        let asym = (linalg::dot(&x, &hy) - linalg::dot(&y, &hx)).abs();
        prop_assert!(asym <= 1e-10 * linalg::norm2(&x) * linalg::norm2(&y));
    }
}
