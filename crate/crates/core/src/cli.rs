//! Command-line front end behind the `hikedim` binary.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::bench::{self, BenchConfig, BenchMode, BenchOp};
use crate::dmaps::{self, diffusion_map, markov_eigs, markov_eigs_dense, Backend, DiffusionParams};
use crate::error::{Error, Result};
use crate::hmatrix::{compress, load_hmatrix, save_hmatrix, HMatrix, HParams};
use crate::krylov::{eigsh, EigResult, EigshOptions, Which};
use crate::linalg::Matrix;
use crate::pointcloud::{
    gaussian_kernel, generate_scurve, generate_swiss_roll, generate_uniform, load_points,
    median_sigma, save_points, write_csv, GaussianKernel, PointCloud, PointFormat,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hikedim",
    version,
    about = "Hierarchical kernel matrices, Lanczos and diffusion maps"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "HIKEDIM_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic point cloud.
    Gen(GenArgs),
    /// Compress the Gaussian kernel of a point cloud into an HKM1 file.
    Compress(CompressArgs),
    /// Eigenpairs of a compressed or dense kernel operator.
    Eigs(EigsArgs),
    /// Diffusion-map embedding of a point cloud.
    Dmap(DmapArgs),
    /// Weak or strong thread-scaling benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dataset {
    Scurve,
    SwissRoll,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Csv,
    Raw,
}

impl From<FileFormat> for PointFormat {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Csv => PointFormat::Csv,
            FileFormat::Raw => PointFormat::RawF64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Operator {
    /// The symmetrized diffusion transition operator.
    Markov,
    /// The kernel matrix itself.
    Kernel,
}

/// `auto` or a positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaArg {
    Auto,
    Value(f64),
}

impl FromStr for SigmaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(SigmaArg::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| format!("expected 'auto' or a number, got '{s}'"))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("sigma must be finite and > 0, got {v}"));
        }
        Ok(SigmaArg::Value(v))
    }
}

impl SigmaArg {
    fn option(self) -> Option<f64> {
        match self {
            SigmaArg::Auto => None,
            SigmaArg::Value(v) => Some(v),
        }
    }
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Point file, CSV or raw-f64.
    pub points: PathBuf,
    /// Format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FileFormat>,
    /// Ignore the first CSV row.
    #[arg(long, value_parser = BoolishValueParser::new(), num_args = 0..=1,
          default_value = "false", default_missing_value = "true")]
    pub skip_header: bool,
}

impl InputArgs {
    fn load(&self) -> Result<PointCloud> {
        load_cloud(&self.points, self.format, self.skip_header)
    }
}

#[derive(Debug, Args)]
pub struct HParamArgs {
    /// Maximum leaf size.
    #[arg(long, default_value_t = 768)]
    pub leaf: usize,
    /// Maximum rank of a low-rank block.
    #[arg(long, default_value_t = 768)]
    pub rank: usize,
    /// Compression tolerance.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Neighbors per point kept exact.
    #[arg(long, default_value_t = 64)]
    pub neighbors: usize,
    /// Largest size with exact neighbor search.
    #[arg(long, default_value_t = crate::pointcloud::DEFAULT_DENSE_LIMIT)]
    pub dense_limit: usize,
}

impl HParamArgs {
    fn params(&self) -> HParams {
        HParams {
            leaf_size_max: self.leaf,
            rank_max: self.rank,
            tol: self.tol,
            kappa: self.neighbors,
            dense_limit: self.dense_limit,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub dataset: Dataset,
    #[arg(long)]
    pub n: usize,
    /// Ambient dimension, uniform clouds only.
    #[arg(long, default_value_t = 6)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; CSV on stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FileFormat>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "auto")]
    pub sigma: SigmaArg,
    #[command(flatten)]
    pub hparams: HParamArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// HKM1 output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EigsArgs {
    /// HKM1 file, or a point file with `--dense`.
    pub input: PathBuf,
    /// Treat the input as points and use the dense kernel.
    #[arg(long)]
    pub dense: bool,
    #[arg(long, value_enum)]
    pub format: Option<FileFormat>,
    #[arg(long, value_parser = BoolishValueParser::new(), num_args = 0..=1,
          default_value = "false", default_missing_value = "true")]
    pub skip_header: bool,
    /// Bandwidth for `--dense` or `--reference`; defaults to the one stored
    /// in the HKM1 file, else `auto`.
    #[arg(long)]
    pub sigma: Option<SigmaArg>,
    #[arg(long, value_enum, default_value = "markov")]
    pub operator: Operator,
    /// Density exponent of the Markov operator.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// `la`, `sa` or `lm`.
    #[arg(long, default_value = "la")]
    pub which: String,
    /// Eigensolver tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Point file for a dense LAPACK comparison.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DmapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "auto")]
    pub sigma: SigmaArg,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub t: u32,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// `dense`, `lanczos-dense` or `lanczos-hmatrix`.
    #[arg(long, default_value = "lanczos-hmatrix")]
    pub backend: String,
    #[command(flatten)]
    pub hparams: HParamArgs,
    #[arg(long, default_value_t = 1e-10)]
    pub eig_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also run the dense backend and report the eigenvalue difference.
    #[arg(long)]
    pub compare_dense: bool,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "strong")]
    pub mode: String,
    /// `compress`, `evaluate`, `eigsh` or `dmap`.
    #[arg(long, default_value = "evaluate")]
    pub op: String,
    /// Ascending problem sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16384")]
    pub sizes: Vec<usize>,
    /// Thread counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub thread_counts: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 6)]
    pub dim: usize,
    #[arg(long, default_value = "auto")]
    pub sigma: SigmaArg,
    #[command(flatten)]
    pub hparams: HParamArgs,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::Numerical(_) => EXIT_NOT_CONVERGED,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = std::result::Result<i32, CliError>;

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        // a pool already set up by an embedding program wins
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(&cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Runs one parsed command, writing machine-readable output to `out`.
pub fn execute(cmd: &Command, out: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Compress(a) => cmd_compress(a, out),
        Command::Eigs(a) => cmd_eigs(a, out),
        Command::Dmap(a) => cmd_dmap(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

fn stdout_err(e: io::Error) -> CliError {
    CliError {
        code: EXIT_IO,
        message: format!("cannot write output: {e}"),
    }
}

fn load_cloud(path: &Path, format: Option<FileFormat>, skip_header: bool) -> Result<PointCloud> {
    let format = format.map_or_else(|| PointFormat::from_path(path), PointFormat::from);
    load_points(path, format, skip_header)
}

fn emit_json(out: &mut dyn Write, v: &Value) -> std::result::Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("json");
    writeln!(out, "{text}").map_err(stdout_err)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> CliResult {
    let pc = match a.dataset {
        Dataset::Scurve => generate_scurve(a.n, a.noise, a.seed)?,
        Dataset::SwissRoll => generate_swiss_roll(a.n, a.noise, a.seed)?,
        Dataset::Uniform => generate_uniform(a.n, a.dim, a.seed)?,
    };
    match &a.out {
        Some(path) => {
            let format = a
                .format
                .map_or_else(|| PointFormat::from_path(path), PointFormat::from);
            save_points(&pc, path, format)?;
        }
        None => {
            if a.format == Some(FileFormat::Raw) {
                return Err(usage("raw output needs --out"));
            }
            write_csv(&pc, &mut &mut *out).map_err(stdout_err)?;
        }
    }
    Ok(EXIT_OK)
}

fn resolve_sigma(pc: &PointCloud, sigma: Option<f64>, seed: u64) -> Result<f64> {
    match sigma {
        Some(s) => Ok(s),
        None => median_sigma(pc, dmaps::SIGMA_SAMPLE, seed),
    }
}

fn cmd_compress(a: &CompressArgs, out: &mut dyn Write) -> CliResult {
    let pc = a.input.load()?;
    let sigma = resolve_sigma(&pc, a.sigma.option(), a.seed)?;
    let kernel = GaussianKernel::new(&pc, sigma)?;
    let params = a.hparams.params();
    let (mut h, report) = compress(&kernel, &params, a.seed)?;
    h.set_sigma(Some(sigma));
    save_hmatrix(&h, &a.out)?;
    let v = json!({
        "n": pc.n(),
        "sigma": sigma,
        "params": params,
        "est_rel_error": report.est_rel_error,
        "compress_seconds": report.compress_seconds,
        "stored_scalars": report.stored_scalars,
        "near_field_nnz": h.near_field().nnz(),
        "max_rank": report.max_rank(),
        "achieved_ranks": report.achieved_ranks,
        "out": a.out,
    });
    emit_json(out, &v)?;
    Ok(EXIT_OK)
}

/// Eigenpairs in the shape shared by every eigs path.
struct Pairs {
    values: Vec<f64>,
    vectors: Matrix,
    residuals: Vec<f64>,
    iterations: usize,
    matvecs: usize,
    converged: bool,
}

impl From<EigResult> for Pairs {
    fn from(r: EigResult) -> Self {
        Pairs {
            values: r.values,
            vectors: r.vectors,
            residuals: r.residual_norms,
            iterations: r.iterations,
            matvecs: r.matvecs,
            converged: r.converged,
        }
    }
}

impl From<dmaps::MarkovSpectrum> for Pairs {
    fn from(s: dmaps::MarkovSpectrum) -> Self {
        Pairs {
            values: s.eigenvalues,
            vectors: s.psi,
            residuals: s.residual_norms,
            iterations: s.iterations,
            matvecs: s.matvecs,
            converged: s.converged,
        }
    }
}

fn solve<O>(op: &O, operator: Operator, alpha: f64, opts: &EigshOptions) -> Result<Pairs>
where
    O: crate::krylov::LinearOp,
    for<'a> &'a O: crate::krylov::LinearOp,
{
    match operator {
        Operator::Markov => markov_eigs(op, alpha, opts).map(Pairs::from),
        Operator::Kernel => eigsh(op, opts).map(Pairs::from),
    }
}

fn reference_values(
    pc: &PointCloud,
    sigma: f64,
    operator: Operator,
    alpha: f64,
    which: Which,
    k: usize,
) -> Result<Vec<f64>> {
    let kernel = GaussianKernel::new(pc, sigma)?;
    match (operator, which) {
        (Operator::Markov, Which::LargestAlgebraic) => {
            Ok(markov_eigs_dense(&kernel, alpha, k)?.eigenvalues)
        }
        (Operator::Kernel, Which::LargestAlgebraic) => {
            let dense = gaussian_kernel(pc, sigma)?;
            Ok(crate::dense::sym_eig_largest(dense.entries(), pc.n(), k)?.values)
        }
        (Operator::Kernel, Which::SmallestAlgebraic) => {
            let dense = gaussian_kernel(pc, sigma)?;
            Ok(crate::dense::sym_eig_range(dense.entries(), pc.n(), 0, k)?.values)
        }
        _ => Err(Error::invalid(
            "a dense reference is available for the largest Markov or the largest/smallest kernel eigenvalues",
        )),
    }
}

fn cmd_eigs(a: &EigsArgs, out: &mut dyn Write) -> CliResult {
    let which: Which = a.which.parse()?;
    if a.operator == Operator::Markov && which != Which::LargestAlgebraic {
        return Err(usage("the Markov operator supports --which la only"));
    }
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(usage(format!("alpha must lie in [0, 1], got {}", a.alpha)));
    }
    let opts = EigshOptions::new(a.k)
        .which(which)
        .tol(a.tol)
        .max_restarts(a.max_restarts)
        .seed(a.seed);
    let (pairs, sigma, n) = if a.dense {
        let pc = load_cloud(&a.input, a.format, a.skip_header)?;
        let sigma = resolve_sigma(&pc, a.sigma.and_then(SigmaArg::option), a.seed)?;
        let dense = gaussian_kernel(&pc, sigma)?;
        (
            solve(&dense, a.operator, a.alpha, &opts)?,
            Some(sigma),
            pc.n(),
        )
    } else {
        let h: HMatrix = load_hmatrix(&a.input)?;
        let sigma = a.sigma.and_then(SigmaArg::option).or(h.sigma());
        (solve(&h, a.operator, a.alpha, &opts)?, sigma, h.n())
    };

    let mut summary = json!({
        "n": n,
        "k": a.k,
        "operator": match a.operator { Operator::Markov => "markov", Operator::Kernel => "kernel" },
        "which": a.which,
        "backend": if a.dense { "lanczos-dense" } else { "lanczos-hmatrix" },
        "sigma": sigma,
        "eigenvalues": pairs.values,
        "residuals": pairs.residuals,
        "iterations": pairs.iterations,
        "matvecs": pairs.matvecs,
        "converged": pairs.converged,
    });
    if let Some(path) = &a.reference {
        let pc = load_cloud(path, a.format, a.skip_header)?;
        if pc.n() != n {
            return Err(usage(format!(
                "reference has {} points, operator has {n}",
                pc.n()
            )));
        }
        let sigma = match sigma {
            Some(s) => s,
            None => resolve_sigma(&pc, None, a.seed)?,
        };
        let reference = reference_values(&pc, sigma, a.operator, a.alpha, which, a.k)?;
        let m = pairs.values.len().min(reference.len());
        summary["reference_eigenvalues"] = json!(reference);
        summary["eigenvalue_diff_frobenius"] =
            json!(frobenius_diff(&pairs.values[..m], &reference[..m]));
    }

    let mut text = String::from("index,eigenvalue\n");
    for (i, v) in pairs.values.iter().enumerate() {
        text.push_str(&format!("{i},{v:e}\n"));
    }
    dmaps::write_file(&with_suffix(&a.out, "_eigenvalues.csv"), text.as_bytes())?;
    dmaps::write_file(
        &with_suffix(&a.out, "_eigenvectors.csv"),
        dmaps::matrix_csv(&pairs.vectors, "v").as_bytes(),
    )?;
    let json_text = serde_json::to_string_pretty(&summary).expect("json");
    dmaps::write_file(&with_suffix(&a.out, "_summary.json"), json_text.as_bytes())?;
    emit_json(out, &summary)?;
    Ok(if pairs.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn cmd_dmap(a: &DmapArgs, out: &mut dyn Write) -> CliResult {
    let pc = a.input.load()?;
    let backend: Backend = a.backend.parse()?;
    let params = DiffusionParams {
        sigma: a.sigma.option(),
        alpha: a.alpha,
        t: a.t,
        k: a.k,
        delta: a.delta,
        backend,
        hmatrix: a.hparams.params(),
        eig_tol: a.eig_tol,
        max_restarts: a.max_restarts,
        seed: a.seed,
    };
    let model = diffusion_map(&pc, &params)?;
    model.export(&a.out)?;
    let mut summary = model.summary_json();
    if a.compare_dense {
        let dense = diffusion_map(
            &pc,
            &DiffusionParams {
                sigma: Some(model.sigma),
                backend: Backend::Dense,
                ..params.clone()
            },
        )?;
        let m = model.eigenvalues.len().min(dense.eigenvalues.len());
        summary["reference_eigenvalues"] = json!(dense.eigenvalues);
        summary["eigenvalue_diff_frobenius"] = json!(frobenius_diff(
            &model.eigenvalues[..m],
            &dense.eigenvalues[..m]
        ));
    }
    emit_json(out, &summary)?;
    Ok(if model.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> CliResult {
    let cfg = BenchConfig {
        mode: a.mode.parse::<BenchMode>()?,
        op: a.op.parse::<BenchOp>()?,
        sizes: a.sizes.clone(),
        threads: a.thread_counts.clone(),
        reps: a.reps,
        dim: a.dim,
        seed: a.seed,
        sigma: a.sigma.option(),
        hmatrix: a.hparams.params(),
        k: a.k,
        memory_limit: None,
    };
    let records = bench::run_bench(&cfg, |r| {
        let secs = r.median_seconds.map_or("-".into(), |s| format!("{s:.4}s"));
        let eff = r.efficiency_pct.map_or("-".into(), |e| format!("{e:.1}%"));
        eprintln!(
            "{} {} n={} threads={} median={secs} efficiency={eff} {}",
            r.mode, r.op, r.n, r.threads, r.status
        );
    })?;
    match &a.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            bench::write_csv(&records, BufWriter::new(file)).map_err(|e| Error::io(path, e))?;
        }
        None => bench::write_csv(&records, &mut *out).map_err(stdout_err)?,
    }
    Ok(EXIT_OK)
}
