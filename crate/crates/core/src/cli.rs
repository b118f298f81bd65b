//! Command-line front end: `gen`, `solve`, `oracle`, `check` and `bench`.
//!
//! Exit codes: 0 success, 1 solver did not converge, 2 usage, 3 I/O or
//! malformed input, 4 numerical failure (including failed `check`s).
//! Failures are also reported as one JSON object on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::operators::{
    load_matrix, read_matrix_market, store_matrix_with_comment, write_matrix_market_with_comment, Basis,
    MatrixMarket, SpdOperator,
};
use crate::oracle::{self, symplectic_defect, ReferenceSpectrum, DENSE_BUDGET};
use crate::solver::{self, beta_best, beta_suggest, Beta, SolverParams, Status, SympEigResult, Variant};
use crate::testgen::{self, Family, GeneratorSpec, DEFAULT_WIDTH};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sympeig", version, about = "Symplectic eigenvalues of SPD matrices by trace-penalty minimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a test matrix and a JSON sidecar.
    Gen(GenArgs),
    /// Compute the p smallest symplectic eigenvalues.
    Solve(SolveArgs),
    /// Dense reference spectrum.
    Oracle(OracleArgs),
    /// Validate SPD-ness of a matrix and symplecticity of a basis.
    Check(CheckArgs),
    /// Penalty-parameter sweeps over generated instances.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Matrix Market file; `<stem>.B.mtx` selects the sparse-plus-low-rank pair.
    #[arg(long, conflicts_with = "family")]
    pub matrix: Option<PathBuf>,
    /// Generate the matrix instead: dense, sparse, slr or prescribed.
    #[arg(long)]
    pub family: Option<Family>,
    /// Half dimension of generated matrices.
    #[arg(long)]
    pub n: Option<usize>,
    /// Nonzero fraction of generated sparse parts (default 10/n).
    #[arg(long)]
    pub density: Option<f64>,
    /// Width of the low-rank factor.
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    pub width: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "SYMPEIG_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub family: Family,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File stem inside the output directory.
    #[arg(long, default_value = "matrix")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub p: usize,
    /// Penalty parameter, a number or `auto`.
    #[arg(long)]
    pub beta: Option<Beta>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat TOML file with solver parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Target residue (enhanced) or gradient norm (basic).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Also write the eigenbasis to `basis.mtx`.
    #[arg(long)]
    pub write_basis: bool,
    /// Compare against the dense reference (2n <= 4000).
    #[arg(long)]
    pub reference: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Basis whose symplecticity is checked.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Random probes for the symmetry and PD tests of large matrices.
    #[arg(long, default_value_t = 16)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub family: Family,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<usize>,
    /// Instances per (n, p), seeded `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub density: Option<f64>,
    /// Penalty labels: dp1001, best, sug, 2sug, 5sug, 10sug, 100sug.
    #[arg(long, value_delimiter = ',', default_value = "dp1001,best,sug,2sug,5sug,10sug,100sug")]
    pub betas: Vec<BetaLabel>,
    #[arg(long, value_delimiter = ',', default_value = "basic,enhanced")]
    pub variants: Vec<Variant>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Leave out wall-clock rows so the CSV is reproducible byte for byte.
    #[arg(long)]
    pub omit_time: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Penalty choices of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BetaLabel {
    /// `1.001 d_p`
    NearDp,
    Best,
    /// `k beta_sug`
    Sug(u32),
}

impl std::str::FromStr for BetaLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp1001" => Ok(BetaLabel::NearDp),
            "best" => Ok(BetaLabel::Best),
            "sug" => Ok(BetaLabel::Sug(1)),
            other => other
                .strip_suffix("sug")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(BetaLabel::Sug)
                .ok_or_else(|| Error::arg(format!("unknown beta label `{other}`"))),
        }
    }
}

impl std::fmt::Display for BetaLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BetaLabel::NearDp => f.write_str("dp1001"),
            BetaLabel::Best => f.write_str("best"),
            BetaLabel::Sug(1) => f.write_str("sug"),
            BetaLabel::Sug(k) => write!(f, "{k}sug"),
        }
    }
}

impl BetaLabel {
    /// `None` when the label needs `d_p` and it is unknown.
    pub fn resolve(self, beta_sug: f64, d_p: Option<f64>) -> Option<f64> {
        match self {
            BetaLabel::NearDp => d_p.map(|d| 1.001 * d),
            BetaLabel::Best => d_p.map(beta_best),
            BetaLabel::Sug(k) => Some(k as f64 * beta_sug),
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) | Error::Budget { .. } => EXIT_USAGE,
        Error::Parse { .. } | Error::Io { .. } => EXIT_IO,
        Error::RankDeficient { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

fn report_error(kind: &str, message: &str) {
    let line = json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            report_error("usage", e.to_string().trim());
            return EXIT_USAGE;
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            exit_code(&e)
        }
    }
}

/// Where a matrix came from, recorded in every output.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceConfig {
    Matrix(PathBuf),
    Generator(GeneratorSpec),
}

struct Loaded {
    op: SpdOperator,
    reference: Option<ReferenceSpectrum>,
    source: SourceConfig,
}

fn load_source(src: &SourceArgs, seed: u64) -> Result<Loaded> {
    match (&src.matrix, src.family) {
        (Some(path), None) => Ok(Loaded {
            op: load_matrix(path)?,
            reference: None,
            source: SourceConfig::Matrix(path.clone()),
        }),
        (None, Some(family)) => {
            let n = src
                .n
                .ok_or_else(|| Error::arg("--family needs --n"))?;
            let spec = GeneratorSpec {
                density: src.density,
                width: src.width,
                ..GeneratorSpec::new(family, n, seed)
            };
            let g = testgen::generate(&spec)?;
            Ok(Loaded {
                op: g.op,
                reference: g.reference,
                source: SourceConfig::Generator(spec),
            })
        }
        _ => Err(Error::arg("exactly one of --matrix or --family is required")),
    }
}

/// Reads a flat TOML parameter file.
pub fn load_params(path: Option<&Path>) -> Result<SolverParams> {
    let Some(path) = path else {
        return Ok(SolverParams::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
            .unwrap_or(1);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.message().to_string(),
        }
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn config_line(config: &impl Serialize) -> String {
    serde_json::to_string(config).unwrap_or_default()
}

/// Writes rows as CSV preceded by a `# config: {...}` comment line.
fn write_csv<R: Serialize>(path: &Path, config: &impl Serialize, rows: &[R]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io(path, e);
    let mut file = fs::File::create(path).map_err(io_err)?;
    writeln!(file, "# config: {}", config_line(config)).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    w.flush().map_err(io_err)
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let spec = GeneratorSpec {
        density: a.density,
        width: a.width,
        ..GeneratorSpec::new(a.family, a.n, a.seed)
    };
    let g = testgen::generate(&spec)?;
    ensure_dir(&a.out.out)?;
    let stem = a.out.out.join(format!("{}.mtx", a.name));
    let config = json!({ "verb": "gen", "generator": spec });
    let files = store_matrix_with_comment(&g.op, &stem, Some(&config_line(&config)))?;
    let sidecar = json!({
        "config": config,
        "seed": spec.seed,
        "kind": g.op.kind(),
        "dim": g.op.dim(),
        "nnz": g.op.nnz(),
        "files": files,
        "reference": g.reference.as_ref().map(|r| &r.d),
    });
    let side = a.out.out.join(format!("{}.json", a.name));
    write_json(&side, &sidecar)?;
    println!("{}", json!({ "files": files, "sidecar": side }));
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SolveConfig<'a> {
    verb: &'static str,
    source: &'a SourceConfig,
    p: usize,
    params: &'a SolverParams,
}

fn resolve_solve_params(a: &SolveArgs) -> Result<SolverParams> {
    let mut params = load_params(a.config.as_deref())?;
    if let Some(b) = a.beta {
        params.beta = b;
    }
    if let Some(s) = a.seed {
        params.seed = s;
    }
    if let Some(v) = a.variant {
        params.variant = v;
    }
    if let Some(t) = a.tol {
        match params.variant {
            Variant::Basic => params.grad_tol = t,
            Variant::Enhanced => params.tol = t,
        }
    }
    if let Some(k) = a.k_max {
        params.k_max = k;
    }
    params.validate()?;
    Ok(params)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    config: &'a SolveConfig<'a>,
    #[serde(flatten)]
    result: &'a SympEigResult,
    metrics: Option<MetricsReport>,
    stages: &'a [solver::StageRecord],
}

fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let params = resolve_solve_params(a)?;
    let loaded = load_source(&a.source, params.seed)?;
    let reference = match (&loaded.reference, a.reference) {
        (Some(r), _) => Some(r.with_p(a.p)?),
        (None, true) => Some(oracle::reference(&loaded.op, a.p)?),
        (None, false) => None,
    };
    let config = SolveConfig {
        verb: "solve",
        source: &loaded.source,
        p: a.p,
        params: &params,
    };
    let result = solver::solve(&loaded.op, a.p, &params)?;
    let metrics = if result.eigenvalues.is_empty() {
        None
    } else {
        Some(metrics::report(&loaded.op, &result, reference.as_ref())?)
    };

    ensure_dir(&a.out.out)?;
    let out = SolveOutput {
        config: &config,
        result: &result,
        metrics,
        stages: &result.trace.stages,
    };
    write_json(&a.out.out.join("result.json"), &out)?;
    write_csv(&a.out.out.join("trace.csv"), &config, &result.trace.iterations)?;
    if a.write_basis && !result.eigenvalues.is_empty() {
        write_matrix_market_with_comment(
            a.out.out.join("basis.mtx"),
            &MatrixMarket::Dense(result.basis.clone()),
            false,
            Some(&config_line(&config)),
        )?;
    }
    println!(
        "{}",
        json!({ "status": result.status, "eigenvalues": result.eigenvalues, "residue": result.residue })
    );
    Ok(match result.status {
        Status::Converged => EXIT_OK,
        Status::MaxIterations => EXIT_NOT_CONVERGED,
        Status::NumericalFailure => EXIT_NUMERICAL,
    })
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32> {
    let loaded = load_source(&a.source, a.seed)?;
    let r = oracle::reference(&loaded.op, a.p)?;
    ensure_dir(&a.out.out)?;
    let config = json!({ "verb": "oracle", "source": loaded.source, "p": a.p, "seed": a.seed });
    let body = json!({
        "config": config,
        "d": r.d,
        "p": r.p,
        "leading": r.leading(),
        "symplecticity": symplectic_defect(&r.s_full),
    });
    write_json(&a.out.out.join("oracle.json"), &body)?;
    write_matrix_market_with_comment(
        a.out.out.join("x_ref.mtx"),
        &MatrixMarket::Dense(r.x_ref.clone()),
        false,
        Some(&config_line(&config)),
    )?;
    println!("{}", json!({ "leading": r.leading() }));
    Ok(EXIT_OK)
}

fn cmd_check(a: &CheckArgs) -> Result<i32> {
    let loaded = load_source(&a.source, a.seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let spd = loaded.op.check_spd(DENSE_BUDGET, a.probes, &mut rng);
    let basis_defect = match &a.basis {
        Some(path) => {
            let b: Basis = match read_matrix_market(path)? {
                MatrixMarket::Dense(d) => d,
                MatrixMarket::Sparse(s) => s.to_dense(),
            };
            if b.nrows() != loaded.op.dim() || b.ncols() % 2 != 0 {
                return Err(Error::arg(format!(
                    "basis is {}x{}, expected {} rows and an even column count",
                    b.nrows(),
                    b.ncols(),
                    loaded.op.dim()
                )));
            }
            Some(symplectic_defect(&b))
        }
        None => None,
    };
    let basis_ok = basis_defect.is_none_or(|d| d <= a.tol);
    let ok = spd.symmetric && spd.positive_definite && basis_ok;
    println!(
        "{}",
        json!({
            "config": { "verb": "check", "source": loaded.source, "seed": a.seed, "probes": a.probes, "tol": a.tol },
            "kind": loaded.op.kind(),
            "dim": loaded.op.dim(),
            "nnz": loaded.op.nnz(),
            "spd": spd,
            "basis_symplecticity": basis_defect,
            "ok": ok,
        })
    );
    Ok(if ok { EXIT_OK } else { EXIT_NUMERICAL })
}

/// One long-format row of `bench.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub family: String,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub variant: String,
    pub beta_label: String,
    pub beta: f64,
    pub metric: String,
    pub value: f64,
    pub note: String,
}

#[derive(Clone, Copy, Debug)]
struct BenchCell {
    n: usize,
    p: usize,
    seed: u64,
    label: BetaLabel,
    variant: Variant,
}

/// Runs one cell and returns its rows. Failures become a single `error` row.
fn bench_cell(
    family: Family,
    cell: BenchCell,
    instance: &Result<(SpdOperator, Option<ReferenceSpectrum>)>,
    params: &SolverParams,
    omit_time: bool,
) -> Vec<BenchRow> {
    let variant = match cell.variant {
        Variant::Basic => "basic",
        Variant::Enhanced => "enhanced",
    };
    let row = |beta: f64, metric: &str, value: f64, note: String| BenchRow {
        family: family.to_string(),
        n: cell.n,
        p: cell.p,
        seed: cell.seed,
        variant: variant.to_string(),
        beta_label: cell.label.to_string(),
        beta,
        metric: metric.to_string(),
        value,
        note,
    };
    let attempt = || -> Result<Vec<BenchRow>> {
        let (op, reference) = instance.as_ref().map_err(|e| Error::arg(e.to_string()))?;
        let sug = beta_suggest(op, cell.p)?;
        let d_p = reference.as_ref().map(|r| r.d[cell.p - 1]);
        let beta = cell
            .label
            .resolve(sug, d_p)
            .ok_or_else(|| Error::arg("label needs d_p but no reference is available"))?;
        let params = SolverParams {
            beta: Beta::Fixed(beta),
            variant: cell.variant,
            seed: cell.seed,
            ..params.clone()
        };
        let started = Instant::now();
        let res = solver::solve(op, cell.p, &params)?;
        let elapsed = started.elapsed().as_secs_f64();
        let status = format!("{:?}", res.status).to_lowercase();
        let mut rows = vec![
            row(beta, "iterations", res.iterations as f64, status.clone()),
            row(beta, "residue", res.residue, status.clone()),
        ];
        if !omit_time {
            rows.push(row(beta, "time", elapsed, status.clone()));
        }
        if let Some(r) = reference {
            if !res.eigenvalues.is_empty() {
                let gw = metrics::golub_werman(&res.basis, &r.with_p(cell.p)?.x_ref)?;
                rows.push(row(beta, "golub_werman", gw, status.clone()));
                let rel = res
                    .eigenvalues
                    .iter()
                    .zip(&r.d)
                    .map(|(a, b)| ((a - b) / b).abs())
                    .fold(0.0, f64::max);
                rows.push(row(beta, "max_rel_error", rel, status));
            }
        }
        Ok(rows)
    };
    attempt().unwrap_or_else(|e| vec![row(f64::NAN, "error", f64::NAN, e.to_string())])
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    if let Some((&n, &p)) = a
        .n
        .iter()
        .flat_map(|n| a.p.iter().map(move |p| (n, p)))
        .find(|(n, p)| **p == 0 || **p >= **n)
        .as_ref()
        .map(|(n, p)| (*n, *p))
    {
        return Err(Error::arg(format!("need 1 <= p < n, got p = {p}, n = {n}")));
    }
    let mut params = load_params(a.config.as_deref())?;
    if let Some(k) = a.k_max {
        params.k_max = k;
    }
    params.validate()?;

    let seeds: Vec<u64> = (0..a.seeds).map(|i| a.seed + i).collect();
    let keys: Vec<(usize, u64)> = a.n.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let max_p = a.p.iter().copied().max().unwrap_or(1);
    let instances: Vec<Result<(SpdOperator, Option<ReferenceSpectrum>)>> = keys
        .par_iter()
        .map(|&(n, seed)| {
            let spec = GeneratorSpec {
                density: a.density,
                ..GeneratorSpec::new(a.family, n, seed)
            };
            let g = testgen::generate(&spec)?;
            let reference = match g.reference {
                Some(r) => Some(r),
                None if 2 * n <= DENSE_BUDGET => Some(oracle::reference(&g.op, max_p.min(n))?),
                None => None,
            };
            Ok((g.op, reference))
        })
        .collect();

    let mut cells = Vec::new();
    for (idx, &(n, seed)) in keys.iter().enumerate() {
        for &p in &a.p {
            for &label in &a.betas {
                for &variant in &a.variants {
                    cells.push((idx, BenchCell { n, p, seed, label, variant }));
                }
            }
        }
    }
    let rows: Vec<BenchRow> = cells
        .par_iter()
        .map(|(idx, cell)| bench_cell(a.family, *cell, &instances[*idx], &params, a.omit_time))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    ensure_dir(&a.out.out)?;
    let config = json!({
        "verb": "bench",
        "family": a.family,
        "n": a.n,
        "p": a.p,
        "seeds": seeds,
        "density": a.density,
        "betas": a.betas.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
        "variants": a.variants,
        "params": params,
    });
    let path = a.out.out.join("bench.csv");
    write_csv(&path, &config, &rows)?;
    let failures = rows.iter().filter(|r| r.metric == "error").count();
    println!("{}", json!({ "rows": rows.len(), "failed_cells": failures, "file": path }));
    Ok(EXIT_OK)
}
