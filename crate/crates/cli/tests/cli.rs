use std::path::Path;
use std::process::{Command, Output};

use koopfit::harness::{EstimationSetup, GridResult};
use koopfit::sim::simulate_snapshots;
use koopfit::{BasisSpec, EstimateResult, ObjectiveSpec, OptimizerConfig, SdeModel, SimConfig};

fn koopfit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopfit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const SIM: [&str; 13] = [
    "simulate", "--model", "ou", "--theta", "0.2,0.08,0.03", "--T", "501", "--dt", "0.0833333", "--paths", "2",
    "--seed", "7",
];

fn simulate_to(dir: &Path, name: &str, paths: &str) {
    let mut args = SIM.to_vec();
    args[10] = paths;
    args.extend(["--out", name]);
    let out = koopfit(&args, dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    simulate_to(dir.path(), "a.csv", "2");
    simulate_to(dir.path(), "b.csv", "2");
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 1 + 2 * 500);
    assert!(dir.path().join("a.json").exists());

    let stdout = koopfit(&SIM, dir.path());
    assert!(stdout.status.success());
    assert_eq!(stdout.stdout, a);
}

#[test]
fn estimate_writes_result_json() {
    let dir = tempfile::tempdir().unwrap();
    simulate_to(dir.path(), "d.csv", "1");
    let out = koopfit(
        &[
            "estimate", "--data", "d.csv", "--basis", "rbf", "--n", "3", "--objective", "frobenius", "--init",
            "0.2,0.08,0.03", "--out", "r.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: EstimateResult = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r.theta_hat.len(), 3);
    assert!(r.objective_value.is_finite());
}

#[test]
fn missing_init_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate_to(dir.path(), "d.csv", "1");
    let out = koopfit(&["estimate", "--data", "d.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    simulate_to(dir.path(), "d.csv", "1");
    let cases: [&[&str]; 4] = [
        &["estimate", "--data", "d.csv", "--init", "0.2,0.08"],
        &["estimate", "--data", "d.csv", "--init", "0.2,0.08,0.03", "--objective", "constrained", "--trunc", "2"],
        &["estimate", "--data", "missing.csv", "--init", "0.2,0.08,0.03"],
        &["estimate", "--data", "d.csv", "--init", "0.2,0.08,0.03", "--objective", "nope"],
    ];
    for args in cases {
        let out = koopfit(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "path_id,index,x,y\n0,0,0.1,0.2\n0,1,0.2,oops\n").unwrap();
    let out = koopfit(
        &["estimate", "--data", "bad.csv", "--dt", "0.1", "--model", "ou", "--init", "0.2,0.08,0.03"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:3"));
}

#[test]
fn round_trip_matches_in_memory_estimate_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    simulate_to(dir.path(), "d.csv", "1");
    let out = koopfit(
        &["estimate", "--data", "d.csv", "--init", "0.25,0.1,0.02", "--out", "r.json"],
        dir.path(),
    );
    assert!(out.status.success());
    let from_file: EstimateResult = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();

    let cfg = SimConfig::exact_ou(vec![0.2, 0.08, 0.03], 0.0833333, 500, 1, 7);
    let data = simulate_snapshots(SdeModel::OrnsteinUhlenbeck, &cfg).unwrap().paths.remove(0);
    let setup = EstimationSetup::new(
        SdeModel::OrnsteinUhlenbeck,
        BasisSpec::RbfAdaptive { n: 3 },
        ObjectiveSpec::frobenius(),
        OptimizerConfig::new(vec![0.25, 0.1, 0.02]),
    );
    let in_memory = setup.estimate(&data).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&from_file.theta_hat), bits(&in_memory.theta_hat));
    assert_eq!(from_file.objective_value.to_bits(), in_memory.objective_value.to_bits());
    assert_eq!(from_file.iterations, in_memory.iterations);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), "# small run\npaths = 4\npoints = 200\nformat = csv\n").unwrap();
    let out = koopfit(&["bench", "--config", "run.conf", "--format", "json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n_paths"], 4);

    std::fs::write(dir.path().join("bad.conf"), "colour = blue\n").unwrap();
    let out = koopfit(&["bench", "--config", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eigscan_emits_grid_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = koopfit(
        &[
            "eigscan", "--family", "legendre", "--horizon", "5", "--n-max", "4", "--plot-data", "grid.csv", "--out",
            "grid.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid: GridResult = serde_json::from_slice(&std::fs::read(dir.path().join("grid.json")).unwrap()).unwrap();
    // J ≤ N over N, J ∈ {2, 3, 4}.
    assert_eq!(grid.cells.len(), 6);
    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert!(csv.starts_with("N,J,J_eff,theta_1,theta_2,in_band,error"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn converge_and_compare_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = koopfit(
        &["converge", "--replicates", "4", "--j-max", "1", "--plot-data", "conv.csv", "--format", "json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["slopes"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(dir.path().join("conv.csv")).unwrap().lines().count(), 1 + 2 * 3);

    let out = koopfit(
        &["compare", "--paths", "3", "--variants", "frobenius,gmm", "--records", "rec.csv", "--format", "csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("variant,parameter,bias,rmse,n_fail,n_paths"));
    assert!(dir.path().join("rec_gmm.csv").exists());
}
