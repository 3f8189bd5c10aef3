use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "koopfit", version, about = "SDE parameter estimation by Koopman generator matching")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat `key = value` file; keys are long flag names, flags on the
    /// command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate snapshot paths to CSV (plus a JSON sidecar).
    Simulate(SimulateArgs),
    /// Estimate parameters from a snapshot CSV.
    Estimate(EstimateArgs),
    /// Bias/RMSE over many simulated (or ingested) OU paths.
    Bench(BenchArgs),
    /// RMSE against data length with log-log slope fits.
    Converge(ConvergeArgs),
    /// Estimates over an (N, J) basis-size / truncation grid.
    Eigscan(EigscanArgs),
    /// Several estimator variants on the same paths.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisKind {
    /// RBFs placed from each dataset's range.
    Rbf,
    /// RBFs spread over [-1, 1].
    RbfFixed,
    Chebyshev,
    Legendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Exact,
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FailureArg {
    /// Any |θ̂_k| > 1 counts as a failure.
    Abs1,
    None,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value_t = BasisKind::Rbf)]
    pub basis: BasisKind,

    /// Number of basis functions.
    #[arg(long = "n", default_value_t = 3)]
    pub n_basis: usize,

    /// frobenius, operator, constrained or gmm.
    #[arg(long, default_value = "frobenius")]
    pub objective: String,

    /// Eigen-truncation order J (frobenius only).
    #[arg(long)]
    pub trunc: Option<usize>,

    /// backtracking or hager-zhang (default depends on the objective).
    #[arg(long)]
    pub line_search: Option<String>,

    #[arg(long, value_enum)]
    pub failure_rule: Option<FailureArg>,

    /// Re-estimate GMM with the moment covariance as weight.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", default_value_t = false)]
    pub gmm_two_pass: bool,

    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,

    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,

    #[arg(long, default_value_t = 1e-6)]
    pub fd_step: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// ou or bmr.
    #[arg(long)]
    pub model: String,

    /// Comma-separated parameters.
    #[arg(long, value_delimiter = ',', required = true)]
    pub theta: Vec<f64>,

    /// Stored points per path (T points give T - 1 snapshot pairs).
    #[arg(long = "T")]
    pub points: usize,

    /// Snapshot spacing.
    #[arg(long)]
    pub dt: f64,

    /// Milstein sub-step (default: dt).
    #[arg(long)]
    pub internal_dt: Option<f64>,

    /// Default: exact for ou, milstein for bmr.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,

    #[arg(long, default_value_t = 1)]
    pub paths: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// A number or `stationary` (default: θ2 for ou, stationary for bmr).
    #[arg(long)]
    pub x0: Option<String>,

    /// CSV file; the sidecar goes next to it. Without it the CSV is
    /// written to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Snapshot CSV with header path_id,index,x,y.
    #[arg(long)]
    pub data: PathBuf,

    /// Snapshot spacing when there is no sidecar.
    #[arg(long)]
    pub dt: Option<f64>,

    /// ou or bmr (default: from the sidecar).
    #[arg(long)]
    pub model: Option<String>,

    /// Initial parameter guess, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub init: Vec<f64>,

    /// Pool every path into one dataset instead of estimating per path.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", default_value_t = false)]
    pub pool: bool,

    #[command(flatten)]
    pub est: EstimatorArgs,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Ingest this snapshot CSV instead of simulating.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Snapshot spacing for ingested data without a sidecar.
    #[arg(long)]
    pub dt: Option<f64>,

    #[arg(long, default_value_t = 500)]
    pub paths: usize,

    /// Snapshot pairs per path.
    #[arg(long, default_value_t = 500)]
    pub points: usize,

    #[arg(long, default_value_t = 2024)]
    pub seed: u64,

    /// True parameters (default: 0.2,0.08,0.03).
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,

    /// Initial guess (default: the true parameters).
    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,

    /// Per-path results CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,

    #[command(flatten)]
    pub est: EstimatorArgs,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,

    /// Lengths are base-t · 2^j for j = 0..=j-max.
    #[arg(long, default_value_t = 4)]
    pub j_max: u32,

    #[arg(long, default_value_t = 500)]
    pub base_t: usize,

    #[arg(long, default_value_t = 2024)]
    pub seed: u64,

    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,

    /// Long-format CSV for plotting.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,

    #[command(flatten)]
    pub est: EstimatorArgs,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EigscanArgs {
    /// chebyshev, legendre or rbf.
    #[arg(long, default_value = "chebyshev")]
    pub family: String,

    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    pub theta: Vec<f64>,

    /// Simulated time units.
    #[arg(long, default_value_t = 100.0)]
    pub horizon: f64,

    #[arg(long, default_value_t = 1.0 / 1024.0)]
    pub internal_dt: f64,

    /// Internal steps between stored snapshots.
    #[arg(long, default_value_t = 1)]
    pub substeps: usize,

    #[arg(long, default_value_t = 2024)]
    pub seed: u64,

    /// Default: 2 for polynomials, 4 for rbf.
    #[arg(long)]
    pub n_min: Option<usize>,

    /// Default: 16 for polynomials, 24 for rbf.
    #[arg(long)]
    pub n_max: Option<usize>,

    /// Default: same as n-min.
    #[arg(long)]
    pub j_min: Option<usize>,

    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,

    #[arg(long)]
    pub plot_data: Option<PathBuf>,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Objectives to compare, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "frobenius,constrained")]
    pub variants: Vec<String>,

    #[arg(long, default_value_t = 200)]
    pub paths: usize,

    /// Data length is points · 2^j.
    #[arg(long, default_value_t = 0)]
    pub j: u32,

    #[arg(long, default_value_t = 500)]
    pub points: usize,

    #[arg(long, default_value_t = 2024)]
    pub seed: u64,

    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,

    /// Per-path results, one CSV per variant named `<prefix>_<variant>.csv`.
    #[arg(long)]
    pub records: Option<PathBuf>,

    #[command(flatten)]
    pub est: EstimatorArgs,

    #[command(flatten)]
    pub output: OutputArgs,
}

/// Appends `--key value` pairs from the config file for every key not given
/// on the command line.
pub fn merge_config_file(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let given: HashSet<String> = argv
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = argv;
    for (key, value) in parse_config(&text, Path::new(&path))? {
        if key == "config" {
            return Err(format!("{path}: config files cannot include other config files"));
        }
        if !given.contains(&key) {
            out.push(format!("--{key}"));
            out.push(value);
        }
    }
    Ok(out)
}

fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("{}:{}: expected key = value", path.display(), i + 1));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(format!("{}:{}: empty key", path.display(), i + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let kv = parse_config("# c\nseed = 3\n\nline_search=backtracking\n", Path::new("x")).unwrap();
        assert_eq!(kv, vec![("seed".into(), "3".into()), ("line-search".into(), "backtracking".into())]);
        assert!(parse_config("seed 3", Path::new("x")).unwrap_err().contains("x:1"));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "seed = 3\npaths = 10\n").unwrap();
        let argv: Vec<String> = ["koopfit", "bench", "--seed", "9", "--config", p.to_str().unwrap()]
            .map(String::from)
            .to_vec();
        let merged = merge_config_file(argv.clone()).unwrap();
        assert_eq!(&merged[..argv.len()], &argv[..]);
        assert_eq!(&merged[argv.len()..], ["--paths", "10"]);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
