//! The `wishart` command line: density and counting-function tables,
//! moments, Monte Carlo samples, sampler-versus-analytic comparison and the
//! identity suite.
//!
//! Every flag may also be given in a `--config` file of `key = value` lines
//! (keys are flag names without the dashes); flags on the command line win.
//!
//! Exit codes: 0 success, 1 failed comparison or identity, 2 configuration
//! error, 3 numerical failure such as exhausted precision.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use crate::density::{cdf_c_with, curve, moments_g_with};
use crate::detkit::{PrecisionPolicy, DEFAULT_ESCALATION_THRESHOLD, DEFAULT_MAX_PRECISION};
use crate::error::Error;
use crate::identities::standard_suite;
use crate::oracle::{analytic_cdf, histogram, ks_distance, moments, sample, SampleBatch};
use crate::spectra::{validate, EnsembleSpec, EvalGrid, MomentQuery, ValidatedSpec, Validation, DEFAULT_DEGENERACY_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// KS distance accepted for 1e5 draws; the default threshold scales as
/// `1/sqrt(count)` from here.
pub const KS_REFERENCE: f64 = 0.0061;

#[derive(Debug, Parser)]
#[command(name = "wishart", version, about = "Exact spectra of correlated complex Wishart matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Density and counting function on a grid.
    Density(GridArgs),
    /// Counting function (and density) on a grid.
    Cdf(GridArgs),
    /// Determinant moment G_nu(z).
    Moments(MomentArgs),
    /// Monte Carlo eigenvalue samples.
    Sample(SampleArgs),
    /// Kolmogorov-Smirnov comparison of samples against the analytic law.
    Compare(CompareArgs),
    /// Run the determinant identity suite.
    IdentityCheck(IdentityArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SpecArgs {
    /// Eigenvalues of A, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub a: Vec<f64>,
    /// Eigenvalues of B, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub b: Vec<f64>,
    /// Dimension N (defaults to the length of --a).
    #[arg(long)]
    pub n: Option<usize>,
    /// Dimension N' (defaults to the length of --b).
    #[arg(long)]
    pub n_prime: Option<usize>,
    /// Relative spacing below which eigenvalues count as degenerate.
    #[arg(long, default_value_t = DEFAULT_DEGENERACY_TOL)]
    pub degeneracy_tol: f64,
    /// File of `key = value` lines supplying any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PrecisionArgs {
    #[arg(long, default_value_t = 53)]
    pub precision_base: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_PRECISION)]
    pub precision_max: u32,
    #[arg(long, default_value_t = DEFAULT_ESCALATION_THRESHOLD)]
    pub escalation_threshold: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub precision: PrecisionArgs,
    /// Inclusive linear grid `start:stop:points`.
    #[arg(long, conflicts_with = "grid_file")]
    pub grid: Option<String>,
    /// File with one lambda per line.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MomentArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub precision: PrecisionArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub nu: i64,
    /// Complex shift such as `-1`, `0.3+0.7i` or `2i`.
    #[arg(long, allow_hyphen_values = true)]
    pub z: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Random seed; drawn from system entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub precision: PrecisionArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Largest accepted KS distance.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Bin edges as an inclusive linear grid `start:stop:points`.
    #[arg(long, conflicts_with = "grid_file")]
    pub grid: Option<String>,
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IdentityArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Which job a resolved configuration runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Density,
    Cdf,
    Moments,
    Sample,
    Compare,
    IdentityCheck,
}

/// Fully resolved and validated job description.
#[derive(Debug, Clone)]
pub struct JobConfig {
    pub command: CommandKind,
    pub spec: Option<ValidatedSpec>,
    pub grid: Option<EvalGrid>,
    pub nu: u32,
    pub z: Complex64,
    pub seed: Option<u64>,
    pub count: usize,
    pub bins: usize,
    pub threshold: Option<f64>,
    pub precision: PrecisionPolicy,
    pub output: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::PrecisionExhausted { .. } | Error::OverflowEscalation { .. } | Error::SignResidue { .. } => {
                EXIT_NUMERIC
            }
            Error::EigenSolverFailure { .. } | Error::RouteMismatch { .. } => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::config(format!("I/O error: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Failure::config(format!("{}:{}: expected `key = value`", path.display(), lineno + 1))
        })?;
        let key = k.trim().replace('_', "-");
        if key == "config" {
            return Err(Failure::config("config files cannot include other config files"));
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

/// Appends `--key value` for every config entry whose flag is absent from
/// the command line.
pub fn expand_config(args: Vec<String>) -> CliResult<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let given = |key: &str| {
        let flag = format!("--{key}");
        let prefix = format!("--{key}=");
        args.iter().any(|a| *a == flag || a.starts_with(&prefix))
    };
    let extra: Vec<String> = parse_config_file(Path::new(&path))?
        .into_iter()
        .filter(|(k, _)| !given(k))
        .flat_map(|(k, v)| [format!("--{k}"), v])
        .collect();
    let mut out = args;
    out.extend(extra);
    Ok(out)
}

fn build_spec(args: &SpecArgs) -> CliResult<ValidatedSpec> {
    let mut spec = EnsembleSpec::new(args.a.clone(), args.b.clone());
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(np) = args.n_prime {
        spec.n_prime = np;
    }
    match validate(&spec, args.degeneracy_tol)? {
        Validation::Valid(v) => Ok(v),
        Validation::Degenerate(report) => Err(Failure::config(format!(
            "Degenerate spectrum: {} pair(s) closer than relative spacing {:e}; perturb the inputs",
            report.pairs.len(),
            report.tolerance
        ))),
    }
}

fn build_policy(p: &PrecisionArgs) -> CliResult<PrecisionPolicy> {
    Ok(PrecisionPolicy::new(p.precision_base, p.escalation_threshold, p.precision_max)?)
}

fn parse_grid(text: &str, guard: f64) -> CliResult<EvalGrid> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Failure::config(format!("grid `{text}` is not start:stop:points"));
    let [start, stop, points] = parts[..] else {
        return Err(bad());
    };
    let start: f64 = start.trim().parse().map_err(|_| bad())?;
    let stop: f64 = stop.trim().parse().map_err(|_| bad())?;
    let points: usize = points.trim().parse().map_err(|_| bad())?;
    Ok(EvalGrid::linear(start, stop, points, guard)?)
}

fn read_grid_file(path: &Path, guard: f64) -> CliResult<EvalGrid> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read grid {}: {e}", path.display())))?;
    let points = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Failure::config(format!("grid file entry `{l}` is not a number")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(EvalGrid::new(points, guard)?)
}

fn grid_from(grid: &Option<String>, file: &Option<PathBuf>, spec: &ValidatedSpec) -> CliResult<Option<EvalGrid>> {
    let guard = spec.default_lambda_guard();
    match (grid, file) {
        (Some(g), _) => parse_grid(g, guard).map(Some),
        (None, Some(f)) => read_grid_file(f, guard).map(Some),
        (None, None) => Ok(None),
    }
}

fn parse_z(text: &str) -> CliResult<Complex64> {
    text.trim()
        .replace(' ', "")
        .parse::<Complex64>()
        .map_err(|_| Failure::config(format!("cannot parse complex shift `{text}`")))
}

impl JobConfig {
    fn base(command: CommandKind) -> Self {
        JobConfig {
            command,
            spec: None,
            grid: None,
            nu: 0,
            z: Complex64::new(0.0, 0.0),
            seed: None,
            count: 0,
            bins: 0,
            threshold: None,
            precision: PrecisionPolicy::default(),
            output: None,
        }
    }

    pub fn from_cli(cli: &Cli) -> CliResult<JobConfig> {
        match &cli.command {
            Command::Density(g) | Command::Cdf(g) => {
                let kind = if matches!(cli.command, Command::Density(_)) {
                    CommandKind::Density
                } else {
                    CommandKind::Cdf
                };
                let spec = build_spec(&g.spec)?;
                let grid = grid_from(&g.grid, &g.grid_file, &spec)?
                    .ok_or_else(|| Failure::config("--grid or --grid-file is required"))?;
                Ok(JobConfig {
                    spec: Some(spec),
                    grid: Some(grid),
                    precision: build_policy(&g.precision)?,
                    output: g.output.clone(),
                    ..JobConfig::base(kind)
                })
            }
            Command::Moments(m) => {
                let nu = u32::try_from(m.nu)
                    .map_err(|_| Failure::config(format!("nu must be a nonnegative integer, got {}", m.nu)))?;
                Ok(JobConfig {
                    spec: Some(build_spec(&m.spec)?),
                    nu,
                    z: parse_z(&m.z)?,
                    precision: build_policy(&m.precision)?,
                    output: m.output.clone(),
                    ..JobConfig::base(CommandKind::Moments)
                })
            }
            Command::Sample(s) => {
                if s.count == 0 {
                    return Err(Failure::config("--count must be >= 1"));
                }
                Ok(JobConfig {
                    spec: Some(build_spec(&s.spec)?),
                    seed: s.seed,
                    count: s.count,
                    output: s.output.clone(),
                    ..JobConfig::base(CommandKind::Sample)
                })
            }
            Command::Compare(c) => {
                let seed = c
                    .seed
                    .ok_or_else(|| Failure::config("compare requires --seed for reproducibility"))?;
                if c.count == 0 || c.bins == 0 {
                    return Err(Failure::config("--count and --bins must be >= 1"));
                }
                let spec = build_spec(&c.spec)?;
                let grid = grid_from(&c.grid, &c.grid_file, &spec)?;
                Ok(JobConfig {
                    grid,
                    spec: Some(spec),
                    seed: Some(seed),
                    count: c.count,
                    bins: c.bins,
                    threshold: c.threshold,
                    precision: build_policy(&c.precision)?,
                    output: c.output.clone(),
                    ..JobConfig::base(CommandKind::Compare)
                })
            }
            Command::IdentityCheck(i) => Ok(JobConfig {
                seed: Some(i.seed),
                output: i.output.clone(),
                ..JobConfig::base(CommandKind::IdentityCheck)
            }),
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn emit(path: &Option<PathBuf>, stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn require_spec(config: &JobConfig) -> CliResult<&ValidatedSpec> {
    config
        .spec
        .as_ref()
        .ok_or_else(|| Failure::config("command needs --a and --b"))
}

fn run_grid(config: &JobConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let spec = require_spec(config)?;
    let grid = config
        .grid
        .as_ref()
        .ok_or_else(|| Failure::config("--grid or --grid-file is required"))?;
    let c = curve(spec, grid, &config.precision);
    let mut text = String::from("lambda,rho,cdf,precision_bits\n");
    for (i, &l) in grid.points().iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{}\n",
            num(l),
            num(c.rho[i]),
            num(c.cdf[i]),
            c.meta[i].precision_bits
        ));
    }
    emit(&config.output, stdout, &text)?;
    let mut code = EXIT_OK;
    for (i, e) in c.failures() {
        writeln!(stderr, "lambda = {}: {e}", grid.points()[i])?;
        code = code.max(Failure::from(e.clone()).code);
    }
    Ok(code)
}

fn run_moments(config: &JobConfig, stdout: &mut dyn Write) -> CliResult<i32> {
    let spec = require_spec(config)?;
    let q = MomentQuery::new(config.nu, config.z);
    let g = moments_g_with(spec, &q, &config.precision)?.value;
    let text = format!(
        "nu,re_z,im_z,re_G,im_G\n{},{},{},{},{}\n",
        config.nu,
        num(config.z.re),
        num(config.z.im),
        num(g.re),
        num(g.im)
    );
    emit(&config.output, stdout, &text)?;
    Ok(EXIT_OK)
}

fn summary_text(batch: &SampleBatch) -> String {
    let (mean, var) = moments(batch);
    let list = |v: &[f64]| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",");
    format!(
        "seed = {}\ncount = {}\nmean = {}\nvariance = {}\n",
        batch.seed,
        batch.count,
        list(&mean),
        list(&var)
    )
}

fn run_sample(config: &JobConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let spec = require_spec(config)?;
    let seed = config.seed.unwrap_or_else(rand::random);
    let batch = sample(spec, seed, config.count)?;
    let header: Vec<String> = (1..=spec.n_prime).map(|k| format!("lambda_{k}")).collect();
    let mut text = header.join(",") + "\n";
    for d in batch.draws() {
        let row: Vec<String> = d.iter().map(|x| num(*x)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    emit(&config.output, stdout, &text)?;
    let summary = summary_text(&batch);
    match &config.output {
        Some(p) => {
            let mut side = p.clone().into_os_string();
            side.push(".summary");
            fs::write(PathBuf::from(side), summary)?;
        }
        None => stderr.write_all(summary.as_bytes())?,
    }
    Ok(EXIT_OK)
}

/// Upper edge of the default histogram: the pooled 99.9% quantile.
fn default_edges(batch: &SampleBatch, bins: usize) -> Vec<f64> {
    let pooled = batch.pooled_sorted();
    let idx = ((pooled.len() as f64 * 0.999) as usize).min(pooled.len() - 1);
    let hi = pooled[idx];
    (0..=bins).map(|k| hi * k as f64 / bins as f64).collect()
}

fn run_compare(config: &JobConfig, stdout: &mut dyn Write) -> CliResult<i32> {
    let spec = require_spec(config)?;
    let seed = config.seed.ok_or_else(|| Failure::config("compare requires --seed"))?;
    let batch = sample(spec, seed, config.count)?;
    let distance = ks_distance(&batch, analytic_cdf(spec, config.precision));
    if distance.is_nan() {
        return Err(Failure {
            code: EXIT_NUMERIC,
            message: "analytic counting function could not be resolved at every sample".into(),
        });
    }
    let threshold = config
        .threshold
        .unwrap_or(KS_REFERENCE * (1e5 / config.count as f64).sqrt());
    let pass = distance < threshold;
    let edges = match &config.grid {
        Some(g) => g.points().to_vec(),
        None => default_edges(&batch, config.bins),
    };
    let guard = spec.default_lambda_guard();
    let cdf_at = |l: f64| -> CliResult<f64> {
        if l < guard {
            Ok(0.0)
        } else {
            Ok(cdf_c_with(spec, l, &config.precision)?.value)
        }
    };
    let observed = histogram(&batch, &edges);
    let mut text = format!(
        "# ks_distance = {}\n# threshold = {}\n# pass = {pass}\n# seed = {seed}\n# count = {}\n",
        num(distance),
        num(threshold),
        config.count
    );
    text.push_str("bin_lo,bin_hi,observed,expected\n");
    let mut lower = cdf_at(edges[0])?;
    for k in 0..observed.len() {
        let upper = cdf_at(edges[k + 1])?;
        let expected = config.count as f64 * (upper - lower);
        text.push_str(&format!(
            "{},{},{},{}\n",
            num(edges[k]),
            num(edges[k + 1]),
            observed[k],
            num(expected)
        ));
        lower = upper;
    }
    emit(&config.output, stdout, &text)?;
    Ok(if pass { EXIT_OK } else { EXIT_FAILED_CHECK })
}

fn run_identities(config: &JobConfig, stdout: &mut dyn Write) -> CliResult<i32> {
    let suite = standard_suite(config.seed.unwrap_or(1));
    let mut text = String::from("name,lhs,rhs,relative_error,passed\n");
    let mut all = true;
    for e in &suite {
        all &= e.passed();
        match &e.outcome {
            Ok(c) => text.push_str(&format!(
                "{},{},{},{},{}\n",
                e.name,
                num(c.lhs),
                num(c.rhs),
                num(c.relative_error),
                c.passed
            )),
            Err(err) => text.push_str(&format!("{},NaN,NaN,NaN,false # {err}\n", e.name)),
        }
    }
    emit(&config.output, stdout, &text)?;
    Ok(if all { EXIT_OK } else { EXIT_FAILED_CHECK })
}

/// Executes a resolved job, writing data to `stdout` (or the output file)
/// and diagnostics to `stderr`. Returns the exit code.
pub fn run(config: &JobConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match config.command {
        CommandKind::Density | CommandKind::Cdf => run_grid(config, stdout, stderr),
        CommandKind::Moments => run_moments(config, stdout),
        CommandKind::Sample => run_sample(config, stdout, stderr),
        CommandKind::Compare => run_compare(config, stdout),
        CommandKind::IdentityCheck => run_identities(config, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

/// Parses `args` (including the program name) and runs the job.
pub fn main_with_args(args: Vec<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    match JobConfig::from_cli(&cli) {
        Ok(config) => run(&config, stdout, stderr),
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

/// Parsed `key = value` pairs of a config file, for inspection.
pub fn read_config(path: &Path) -> std::result::Result<BTreeMap<String, String>, String> {
    parse_config_file(path)
        .map(|v| v.into_iter().collect())
        .map_err(|f| f.message)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("wishart").chain(args.iter().copied()).map(String::from).collect();
        let code = main_with_args(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn moments_normalization() {
        let (code, out, _) = call(&["moments", "--a", "1,2,4", "--b", "0.5,1.5", "--nu", "0", "--z", "-1"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "nu,re_z,im_z,re_G,im_G");
        let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
        assert!((fields[3] - 1.0).abs() < 1e-12, "{}", lines[1]);
        assert!(fields[4].abs() < 1e-12);
    }

    #[test]
    fn complex_shift_parses() {
        assert_eq!(parse_z("0.3+0.7i").unwrap(), Complex64::new(0.3, 0.7));
        assert_eq!(parse_z("-1").unwrap(), Complex64::new(-1.0, 0.0));
        assert_eq!(parse_z("2i").unwrap(), Complex64::new(0.0, 2.0));
        assert!(parse_z("one").is_err());
    }

    #[test]
    fn shape_violation_exits_two() {
        let (code, _, err) = call(&["density", "--a", "1", "--b", "1,2", "--grid", "0.1:1:3"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("ShapeViolation"), "{err}");
    }

    #[test]
    fn negative_nu_exits_two() {
        let (code, _, err) = call(&["moments", "--a", "1", "--b", "1", "--nu", "-1", "--z", "0"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("nu"));
    }

    #[test]
    fn grid_csv_round_trips() {
        let (code, out, _) = call(&["density", "--a", "1", "--b", "1", "--grid", "0.5:2:4"]);
        assert_eq!(code, 0);
        let rows: Vec<Vec<f64>> = out
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert_eq!(r[1], (-r[0]).exp());
            assert!((r[2] - (1.0 - (-r[0]).exp())).abs() < 1e-15);
            let printed = num(r[1]);
            assert_eq!(printed.parse::<f64>().unwrap(), r[1]);
        }
    }

    #[test]
    fn exhausted_precision_exits_three() {
        let (code, out, err) = call(&[
            "density", "--a", "1,2,4", "--b", "0.5,1.5,2.5", "--grid", "0.0000001:1:2",
            "--precision-max", "106",
        ]);
        assert_eq!(code, EXIT_NUMERIC, "{err}");
        assert!(out.lines().nth(1).unwrap().contains("NaN"));
        assert!(err.contains("PrecisionExhausted"));
    }

    #[test]
    fn degenerate_spec_is_rejected() {
        let (code, _, err) = call(&["cdf", "--a", "1,1", "--b", "1", "--grid", "0.5:1:2"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("Degenerate"), "{err}");
    }

    #[test]
    fn compare_requires_seed() {
        let (code, _, err) = call(&["compare", "--a", "1", "--b", "1", "--count", "100"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("seed"));
    }

    #[test]
    fn compare_unit_exponential() {
        let (code, out, _) = call(&["compare", "--a", "1", "--b", "1", "--seed", "5", "--count", "100000"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("# pass = true"));
        let table: Vec<&str> = out.lines().skip_while(|l| l.starts_with('#')).collect();
        assert_eq!(table[0], "bin_lo,bin_hi,observed,expected");
        assert_eq!(table.len(), 41);
    }

    #[test]
    fn compare_flags_wrong_threshold() {
        let (code, out, _) = call(&[
            "compare", "--a", "1", "--b", "1", "--seed", "5", "--count", "2000", "--threshold", "1e-6",
        ]);
        assert_eq!(code, EXIT_FAILED_CHECK);
        assert!(out.contains("# pass = false"));
    }

    #[test]
    fn config_file_supplies_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("job.conf");
        fs::write(&cfg, "# spectra\na = 1,2\nb = 1\nnu = 1\nz = 5\n").unwrap();
        let cfg = cfg.to_str().unwrap();
        let (code, out, err) = call(&["moments", "--config", cfg, "--z", "0"]);
        assert_eq!(code, 0, "{err}");
        let g: f64 = out.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
        assert!((g - 1.5).abs() < 1e-14);
        assert_eq!(read_config(Path::new(cfg)).unwrap()["a"], "1,2");
    }

    #[test]
    fn identity_suite_passes() {
        let (code, out, _) = call(&["identity-check"]);
        assert_eq!(code, 0);
        assert!(out.lines().skip(1).all(|l| l.ends_with("true")));
    }
}
