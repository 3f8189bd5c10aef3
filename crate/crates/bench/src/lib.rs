//! Fixtures shared by the criterion benchmarks.

use koopfit::harness::{ou_replicate_source, OU_THETA};
use koopfit::sim::simulate_snapshots;
use koopfit::{BasisSet, BasisSpec, DMatrix, EdmdProblem, InitialCondition, SdeModel, SimConfig, SnapshotData};

/// One exact OU path of `n_pairs` snapshot pairs from the reference protocol.
pub fn ou_path(n_pairs: usize, seed: u64) -> SnapshotData {
    ou_replicate_source(n_pairs, seed)(0).expect("OU simulation")
}

/// OU problem with three adaptive RBFs.
pub fn ou_problem(data: &SnapshotData) -> EdmdProblem {
    let basis = BasisSpec::RbfAdaptive { n: 3 }.build(data).expect("basis");
    EdmdProblem::new(SdeModel::OrnsteinUhlenbeck, &basis, data).expect("problem")
}

/// Bounded mean-reversion path at θ = (1, 1) from a stationary start.
pub fn bmr_path(n_pairs: usize, seed: u64) -> SnapshotData {
    let cfg = SimConfig::milstein(vec![1.0, 1.0], 1.0 / 1024.0, 1, n_pairs, InitialCondition::Stationary, seed);
    simulate_snapshots(SdeModel::BoundedMeanReversion, &cfg)
        .expect("BMR simulation")
        .paths
        .remove(0)
}

pub fn bmr_problem(data: &SnapshotData, n_basis: usize) -> EdmdProblem {
    let basis = BasisSet::chebyshev(n_basis).expect("basis");
    EdmdProblem::new(SdeModel::BoundedMeanReversion, &basis, data).expect("problem")
}

/// A dense non-normal test matrix with entries of order `scale`.
pub fn test_matrix(n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let v = ((i * 7 + j * 13 + 1) as f64).sin();
        if i == j {
            -scale * (1.0 + i as f64)
        } else {
            scale * v / n as f64
        }
    })
}

pub fn ou_truth() -> Vec<f64> {
    OU_THETA.to_vec()
}
