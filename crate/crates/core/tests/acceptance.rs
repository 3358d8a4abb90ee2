//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hikedim::bench::{self, BenchConfig, BenchMode, BenchOp};
use hikedim::dense;
use hikedim::dmaps::{diffusion_map, Backend, DiffusionModel, DiffusionParams};
use hikedim::hmatrix::{compress, HParams};
use hikedim::krylov::{
    arnoldi_factorization, eigsh, implicit_restart, symmetric_eigen, ArnoldiFactorization, DenseOp,
    EigshOptions,
};
use hikedim::pointcloud::{
    gaussian_kernel, generate_scurve, generate_uniform, median_sigma, GaussianKernel,
};

enum Outcome {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: usize,
    title: &'static str,
    outcome: Outcome,
    detail: String,
}

fn verdict(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn print(line: &Line) {
    let tag = match line.outcome {
        Outcome::Pass => "PASS",
        Outcome::Fail => "FAIL",
        Outcome::Skip => "SKIP",
    };
    println!(
        "criterion {:>2} {tag} {}: {}",
        line.id, line.title, line.detail
    );
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn criterion_1() -> Line {
    let params = HParams::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [1024, 2048, 4096] {
        let pc = generate_uniform(n, 6, 0).unwrap();
        let sigma = median_sigma(&pc, 1000, 0).unwrap();
        let start = Instant::now();
        let (h, _) = compress(&GaussianKernel::new(&pc, sigma).unwrap(), &params, 0).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let k = gaussian_kernel(&pc, sigma).unwrap();
        let approx = h.to_dense();
        let num = frobenius(&approx, k.entries());
        let den = k.entries().iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = num / den;
        ok &= err <= 1e-2 && secs < 120.0;
        parts.push(format!("n={n} err={err:.2e} ({secs:.1}s)"));
    }
    Line {
        id: 1,
        title: "compression error <= 1e-2, < 2 min",
        outcome: verdict(ok),
        detail: parts.join(", "),
    }
}

struct ScurveRuns {
    dense: DiffusionModel,
    hier: DiffusionModel,
}

fn scurve_runs() -> ScurveRuns {
    let pc = generate_scurve(4096, 0.0, 0).unwrap();
    let base = DiffusionParams::default();
    let dense = diffusion_map(
        &pc,
        &DiffusionParams {
            backend: Backend::Dense,
            k: 6,
            ..base.clone()
        },
    )
    .unwrap();
    let hier = diffusion_map(
        &pc,
        &DiffusionParams {
            backend: Backend::LanczosHmatrix,
            ..base
        },
    )
    .unwrap();
    ScurveRuns { dense, hier }
}

fn criterion_2(r: &ScurveRuns) -> Line {
    let diff = frobenius(&r.hier.eigenvalues[..5], &r.dense.eigenvalues[..5]);
    Line {
        id: 2,
        title: "scurve n=4096 first 5 eigenvalues, hmatrix vs dense",
        outcome: verdict(r.hier.eigenvalues.len() == 5 && diff <= 1e-3),
        detail: format!(
            "frobenius diff {diff:.2e} (<= 1e-3), sigma {:.4}",
            r.hier.sigma
        ),
    }
}

fn criterion_3(r: &ScurveRuns) -> Line {
    let lam = &r.dense.eigenvalues;
    let mut ok = true;
    let mut parts = Vec::new();
    for c in 1..=4 {
        let gap = (lam[c - 1] - lam[c]).min(lam[c] - lam[c + 1]);
        if gap < 1e-3 * lam[0] {
            parts.push(format!("psi{c} skipped (gap {gap:.1e})"));
            continue;
        }
        let corr = pearson(r.hier.psi.col(c), r.dense.psi.col(c)).abs();
        ok &= corr >= 0.99;
        parts.push(format!("psi{c} {corr:.6}"));
    }
    Line {
        id: 3,
        title: "eigenvector |corr| >= 0.99, r = 1..4",
        outcome: verdict(ok),
        detail: parts.join(", "),
    }
}

fn criterion_4(models: &mut Vec<DiffusionModel>) -> Line {
    let pc = generate_scurve(2048, 0.0, 0).unwrap();
    let grid = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0, 12.0];
    let mut hit = None;
    let mut parts = Vec::new();
    for sigma in grid {
        let m = diffusion_map(
            &pc,
            &DiffusionParams {
                sigma: Some(sigma),
                t: 1,
                delta: 0.1,
                backend: Backend::Dense,
                ..DiffusionParams::default()
            },
        )
        .unwrap();
        let l = &m.eigenvalues;
        parts.push(format!("s={sigma}:d={} (l3/l1={:.3})", m.d_t, l[3] / l[1]));
        if m.d_t == 2 && hit.is_none() {
            hit = Some(sigma);
        }
        models.push(m);
    }
    let head = match hit {
        Some(s) => format!("d(t)=2 at sigma={s}"),
        None => "no sigma on the grid gives d(t)=2".into(),
    };
    Line {
        id: 4,
        title: "scurve intrinsic dimension d(t)=2 (t=1, delta=0.1, tuned sigma)",
        outcome: verdict(hit.is_some()),
        detail: format!("{head}; {}", parts.join(" ")),
    }
}

/// Random symmetric test matrix of one of several families.
fn random_symmetric(n: usize, family: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    match family % 5 {
        0 => {
            for v in a.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
        }
        1 => {
            for v in a.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        2 => {
            // reflected diagonal with a tight top cluster
            let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.9)).collect();
            d[0] = 1.0;
            d[1] = 1.0 - 1e-3;
            d[2] = 1.0 - 2e-3;
            let u: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let uu: f64 = u.iter().map(|x| x * x).sum();
            for j in 0..n {
                for i in 0..n {
                    let hij = |i: usize, j: usize| (i == j) as u8 as f64 - 2.0 * u[i] * u[j] / uu;
                    let mut s = 0.0;
                    for (l, dl) in d.iter().enumerate() {
                        s += hij(i, l) * dl * hij(l, j);
                    }
                    a[j * n + i] = s;
                }
            }
        }
        3 => {
            let cols = n / 2 + 1;
            let b: Vec<f64> = (0..n * cols)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            for j in 0..n {
                for i in 0..n {
                    let mut s = 0.0;
                    for c in 0..cols {
                        s += b[c * n + i] * b[c * n + j];
                    }
                    a[j * n + i] = s / cols as f64;
                }
            }
        }
        _ => {
            for i in 0..n {
                a[i * n + i] = (i + 1) as f64;
            }
            for _ in 0..3 * n {
                let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
                a[j * n + i] += rng.gen_range(-0.5..0.5);
            }
        }
    }
    for j in 0..n {
        for i in 0..j {
            let s = 0.5 * (a[j * n + i] + a[i * n + j]);
            a[j * n + i] = s;
            a[i * n + j] = s;
        }
    }
    a
}

fn criterion_5() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_val, mut worst_align) = (0.0f64, 0.0f64);
    let mut simple = 0;
    let mut ok = true;
    for case in 0..50 {
        let n = rng.gen_range(20..=256);
        let a = random_symmetric(n, case, &mut rng);
        let op = DenseOp::new(n, a.clone()).unwrap();
        let r = eigsh(&op, &EigshOptions::new(5).seed(case as u64)).unwrap();
        let full = dense::sym_eig(&a, n).unwrap();
        let lmax = full.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let desc: Vec<usize> = (0..n).rev().collect();
        if !r.converged || r.values.len() != 5 {
            ok = false;
            continue;
        }
        for i in 0..5 {
            let di = desc[i];
            let lam = full.values[di];
            let dv = (r.values[i] - lam).abs() / lmax;
            worst_val = worst_val.max(dv);
            ok &= dv <= 1e-8;
            let gap = full
                .values
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != di)
                .map(|(_, v)| (v - lam).abs())
                .fold(f64::INFINITY, f64::min);
            if gap >= 1e-6 * lmax {
                simple += 1;
                let vd = &full.vectors[di * n..(di + 1) * n];
                let align: f64 = r
                    .vectors
                    .col(i)
                    .iter()
                    .zip(vd)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    .abs();
                worst_align = worst_align.max(1.0 - align);
                ok &= align >= 1.0 - 1e-6;
            }
        }
    }
    Line {
        id: 5,
        title: "eigsh(k=5) vs dense on 50 random symmetric operators",
        outcome: verdict(ok),
        detail: format!(
            "max |dlambda|/|lambda_max| {worst_val:.1e} (<= 1e-8), max 1-|<v,v_dense>| {worst_align:.1e} over {simple} simple pairs (<= 1e-6)"
        ),
    }
}

fn h_frobenius(f: &ArnoldiFactorization) -> f64 {
    f.hessenberg()
        .as_slice()
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[derive(Default)]
struct InvariantStats {
    checks: usize,
    orth: f64,
    fact: f64,
    tri: f64,
    failures: usize,
}

impl InvariantStats {
    fn check(&mut self, f: &ArnoldiFactorization, op: &DenseOp) {
        let orth = f.orthonormality_error();
        let fact = f.factorization_error(op) / h_frobenius(f).max(f64::MIN_POSITIVE);
        let tri = f.off_tridiagonal();
        self.checks += 1;
        self.orth = self.orth.max(orth);
        self.fact = self.fact.max(fact);
        self.tri = self.tri.max(tri);
        if !(orth <= 1e-10 && fact <= 1e-8 && tri <= 1e-12) {
            self.failures += 1;
        }
    }
}

fn criterion_6() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut stats = InvariantStats::default();
    for case in 0..1000 {
        let n = rng.gen_range(8..=120);
        let op = DenseOp::new(n, random_symmetric(n, case, &mut rng)).unwrap();
        let start: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = rng.gen_range(2..=n.min(30));
        let mut f = ArnoldiFactorization::start(&op, &start).unwrap();
        stats.check(&f, &op);
        f.extend(&op, m).unwrap();
        stats.check(&f, &op);
        let steps = f.steps();
        if steps < 2 {
            continue;
        }
        let p = rng.gen_range(1..steps);
        let (theta, _) = symmetric_eigen(f.hessenberg()).unwrap();
        let mut sorted = theta.clone();
        sorted.sort_by(f64::total_cmp);
        let shifts = &sorted[..p];
        let g = implicit_restart(&f, shifts).unwrap();
        stats.check(&g, &op);
        let mut g = g;
        g.extend(&op, m).unwrap();
        stats.check(&g, &op);
    }
    Line {
        id: 6,
        title: "factorization invariants, 1000 random cases",
        outcome: verdict(stats.failures == 0),
        detail: format!(
            "{} checks, {} failures; max |XtX-I| {:.1e} (<= 1e-10), max |AX-XH-re|/|H| {:.1e} (<= 1e-8), max off-tridiagonal {:.1e} (<= 1e-12)",
            stats.checks, stats.failures, stats.orth, stats.fact, stats.tri
        ),
    }
}

fn criterion_7() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    let mut worst_keep = 0.0f64;
    let mut nearest_removed = f64::INFINITY;
    let mut ok = true;
    for m in 4..=40 {
        let vals: Vec<f64> = (1..=m).map(|v| v as f64).collect();
        let op = DenseOp::diagonal(&vals);
        let start: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..1.5)).collect();
        let f = arnoldi_factorization(&op, &start, m).unwrap();
        for _ in 0..5 {
            let p = rng.gen_range(1..m);
            let mut idx: Vec<usize> = (0..m).collect();
            for i in 0..p {
                let j = rng.gen_range(i..m);
                idx.swap(i, j);
            }
            let shifted: Vec<f64> = idx[..p].iter().map(|&i| vals[i]).collect();
            let mut kept: Vec<f64> = idx[p..].iter().map(|&i| vals[i]).collect();
            kept.sort_by(f64::total_cmp);
            let g = implicit_restart(&f, &shifted).unwrap();
            let (mut theta, _) = symmetric_eigen(g.hessenberg()).unwrap();
            theta.sort_by(f64::total_cmp);
            cases += 1;
            if theta.len() != kept.len() {
                ok = false;
                continue;
            }
            let keep_err = theta
                .iter()
                .zip(&kept)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_keep = worst_keep.max(keep_err);
            let near = shifted
                .iter()
                .flat_map(|mu| theta.iter().map(move |t| (t - mu).abs()))
                .fold(f64::INFINITY, f64::min);
            nearest_removed = nearest_removed.min(near);
            ok &= keep_err <= 1e-8 && near > 1e-8;
        }
    }
    Line {
        id: 7,
        title: "exact shifts remove exactly the shifted Ritz values on diag(1..m)",
        outcome: verdict(ok),
        detail: format!(
            "{cases} cases, m = 4..40; max kept-value error {worst_keep:.1e} (<= 1e-8), closest surviving value to a shift {nearest_removed:.2}"
        ),
    }
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn criterion_8() -> Line {
    let cfg = BenchConfig {
        op: BenchOp::Evaluate,
        reps: 5,
        ..BenchConfig::default()
    };
    let t = threads();
    let a = bench::measure(&cfg, 8192, t).unwrap();
    let b = bench::measure(&cfg, 16384, t).unwrap();
    let storage = b.stored_scalars as f64 / a.stored_scalars as f64;
    let time = b.median / a.median;
    Line {
        id: 8,
        title: "complexity envelope 8192 -> 16384",
        outcome: verdict(storage <= 2.5 && time <= 3.0),
        detail: format!(
            "stored scalars x{storage:.2} (<= 2.5), median evaluate time x{time:.2} (<= 3.0) on {t} thread(s) [{:.4}s -> {:.4}s]",
            a.median, b.median
        ),
    }
}

fn criterion_9() -> Line {
    let cfg = BenchConfig {
        mode: BenchMode::Strong,
        op: BenchOp::Evaluate,
        sizes: vec![16384],
        threads: vec![1, 2, 4],
        reps: 3,
        ..BenchConfig::default()
    };
    let rows = bench::run_bench(&cfg, |_| ()).unwrap();
    let annotated = rows
        .iter()
        .all(|r| r.is_error() || r.efficiency_pct.is_some());
    let eff: Vec<String> = rows
        .iter()
        .map(|r| match (r.median_seconds, r.efficiency_pct) {
            (Some(s), Some(e)) => format!("{}t {s:.4}s {e:.0}%", r.threads),
            _ => format!("{}t {}", r.threads, r.status),
        })
        .collect();
    let speedup = match (rows[0].median_seconds, rows[2].median_seconds) {
        (Some(a), Some(b)) => a / b,
        _ => f64::NAN,
    };
    let cores = threads();
    let (outcome, head) = if !annotated {
        (Outcome::Fail, "efficiency column missing".to_string())
    } else if cores < 4 {
        (
            Outcome::Skip,
            format!("{cores} core(s) available, the 4-thread speedup check needs >= 4; measured speedup {speedup:.2}"),
        )
    } else {
        (
            verdict(speedup >= 2.0),
            format!("speedup 1->4 threads {speedup:.2} (>= 2)"),
        )
    };
    Line {
        id: 9,
        title: "strong scaling n=16384 with efficiency annotations",
        outcome,
        detail: format!("{head}; {}", eff.join(", ")),
    }
}

fn criterion_10(models: &[DiffusionModel]) -> Line {
    let mut ok = !models.is_empty();
    let (mut l0, mut psi0, mut top) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for m in models {
        let dl = (m.eigenvalues[0] - 1.0).abs();
        let c = m.psi.col(0);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let dev = c.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean.abs();
        let big = m.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
        l0 = l0.max(dl);
        psi0 = psi0.max(dev);
        top = top.max(big);
        ok &= dl <= 1e-6 && dev <= 1e-6 && big <= 1.0 + 1e-8;
    }
    Line {
        id: 10,
        title: "Markov invariants on every pipeline run",
        outcome: verdict(ok),
        detail: format!(
            "{} runs; max |lambda0-1| {l0:.1e} (<= 1e-6), max psi0 relative deviation {psi0:.1e} (<= 1e-6), max |lambda| {top:.12}",
            models.len()
        ),
    }
}

fn main() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let run = |line: Line, lines: &mut Vec<Line>| {
        print(&line);
        lines.push(line);
    };
    let mut models = Vec::new();

    run(criterion_1(), &mut lines);
    let scurve = scurve_runs();
    run(criterion_2(&scurve), &mut lines);
    run(criterion_3(&scurve), &mut lines);
    run(criterion_4(&mut models), &mut lines);
    run(criterion_5(), &mut lines);
    run(criterion_6(), &mut lines);
    run(criterion_7(), &mut lines);
    run(criterion_8(), &mut lines);
    run(criterion_9(), &mut lines);

    let pc = generate_scurve(1024, 0.05, 3).unwrap();
    for backend in [
        Backend::Dense,
        Backend::LanczosDense,
        Backend::LanczosHmatrix,
    ] {
        for alpha in [0.0, 0.5, 1.0] {
            let p = DiffusionParams {
                backend,
                alpha,
                hmatrix: HParams {
                    leaf_size_max: 256,
                    ..HParams::default()
                },
                ..DiffusionParams::default()
            };
            models.push(diffusion_map(&pc, &p).unwrap());
        }
    }
    models.push(scurve.dense);
    models.push(scurve.hier);
    run(criterion_10(&models), &mut lines);

    let failed: Vec<usize> = lines
        .iter()
        .filter(|l| matches!(l.outcome, Outcome::Fail))
        .map(|l| l.id)
        .collect();
    let skipped = lines
        .iter()
        .filter(|l| matches!(l.outcome, Outcome::Skip))
        .count();
    println!(
        "acceptance: {} passed, {} failed, {skipped} skipped in {:.0}s",
        lines.len() - failed.len() - skipped,
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
